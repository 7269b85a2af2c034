"""modq: uncertainty-moderated text classification.

Train small uncertainty-aware classifiers, find the moderation load where
accuracy gain saturates, derive the corresponding uncertainty threshold,
and run a service that auto-accepts confident predictions while routing
the rest to human moderators.
"""

__version__ = "0.1.0"
