# mi-lifecycle tests
