"""Voice-conditioned face morphing.

A U-net face autoencoder whose decoder filters are multiplicatively
gated by sigmoid projections of a speaker embedding, trained
adversarially with cycle consistency so that a proposal face is
minimally morphed toward the owner of a target voice.
"""

__version__ = "0.1.0"
