"""
Learned models: pose GAN, sequence GAN, latent inverter, skeleton-to-image
transformer and the evaluation classifier.
"""
