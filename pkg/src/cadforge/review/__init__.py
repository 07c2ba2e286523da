"""Human verification service: two independent reviews per pair, blind
third-annotator arbitration on disagreement, agreement statistics, and
curated-dataset export."""

from cadforge.review.service import create_app

__all__ = ["create_app"]
