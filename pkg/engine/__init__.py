# mi-lifecycle engine
"""Life-cycle consumption, investment and insurance under money illusion."""
