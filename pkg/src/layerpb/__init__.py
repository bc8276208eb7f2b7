"""Fast multipole method for screened charges in layered media."""
