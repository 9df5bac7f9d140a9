# Tests for ruptura
