"""Data ingestion, experiment orchestration and reports."""
