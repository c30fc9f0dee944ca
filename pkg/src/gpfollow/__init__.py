"""Score following with a harmonic spectral-mixture Gaussian process and windowed Viterbi."""
