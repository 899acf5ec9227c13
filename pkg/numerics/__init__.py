# Dense float64 kernels, seeded randomness and the finite-difference oracle.
