"""Graph-empowered refinement: classify lifelog events against paired
stories by combining a base classifier, knowledge-graph support-event
retrieval, a chat-model support classifier, correction, and label mapping."""

__version__ = "0.1.0"
