"""Application layer of the recurrence engine."""
