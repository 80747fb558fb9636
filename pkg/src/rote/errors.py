"""Exception types shared across the package.

Two failure families: bad inputs (grammar text, config values, CLI args)
raise ConfigError; failures during an otherwise well-configured run
(rejection budget exhausted, enumeration budget exceeded, missing files
at run time) raise RunError. The CLI maps them to exit codes 1 and 2.
"""


class ConfigError(ValueError):
    """Invalid configuration or input: malformed grammar, bad parameters."""


class RunError(RuntimeError):
    """A well-formed run failed partway: budget exhausted, missing artifact."""
