"""Instance generators, trip ingestion, experiment configs and the command line."""
