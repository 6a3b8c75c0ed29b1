"""Communication-training engine with a role-playing conversational agent."""

__version__ = "0.1.0"
