"""
Latent action capture: information-bottleneck latent action models, synthetic
control environments with hidden actions, and the alignment and few-shot
measurements that compare learned latents with the true actions.
"""
__version__ = "0.1.0"
