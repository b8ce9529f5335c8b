"""Multi-node rehabilitation data pipeline.

Data-collection nodes pseudonymize, encrypt, and store-and-forward
multi-modal rehabilitation data to a trusted compute core (landing zone +
workflow orchestrator + analytics) that exports standards-shaped
observations and dashboard data back to the clinic.
"""

__version__ = "0.1.0"
