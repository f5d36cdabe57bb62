# Tests for pathcalc
