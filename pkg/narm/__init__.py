# The attentive session encoder, bi-linear decoder and their hand-derived gradients.
