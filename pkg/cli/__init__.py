# mi-lifecycle CLI
