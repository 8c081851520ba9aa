"""Knowledge tracing with an explainable student-profile Analyst and a Predictor that improve each other."""

__version__ = "0.1.0"
