"""In-silico clinical trials of personalised treatments.

Patient models, virtual patient cohorts, clinical records, digital twins,
treatment monitors, treatment plan search and the multi-arm trial harness.
"""

__version__ = "1.0.0"
