"""Label-flip poisoning and FGSM evasion experiments against ML intrusion detectors."""

__version__ = "0.1.0"
