"""Domain models for the recurrence engine."""
