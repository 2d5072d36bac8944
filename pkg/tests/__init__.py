# kzcoarsen test suite
