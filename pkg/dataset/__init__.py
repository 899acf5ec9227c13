# Click-log ingestion, sessionization, filtering, splits and prefix/label examples.
