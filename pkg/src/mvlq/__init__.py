"""Mean-field LQ control under g-expectation."""
