"""Model-serving sidecar for the multimodal embedding wire protocol.

Serves dense text/image embeddings, 32-row fused token matrices,
cross-encoder style passage scoring and text generation over HTTP,
compatible with any client speaking the ``/v1`` protocol.
"""

__version__ = "0.1.0"


class ServiceError(Exception):
    """Base class for service configuration and backend failures."""
