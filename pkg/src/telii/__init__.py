"""Temporal event-level inverted index for cohort discovery.

Pre-computes before/after/co-occur relations and exact signed day
differences between every pair of events a patient has, stores them as
posting lists in immutable on-disk segments, and answers temporal cohort
queries with point lookups instead of on-the-fly timeline scans.
"""

__version__ = "0.1.0"
