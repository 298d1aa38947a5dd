import logging

# Centralized shared objects so they can be imported without causing circular imports.
# Same logger object as the Flask app.logger, so services can log outside an app context.
logger = logging.getLogger("counterlens")


class AdapterRegistry:
    """Maps adapter selectors such as ``psutil`` or ``replay:<path>`` to adapter factories."""

    def __init__(self, default="psutil"):
        self.default = default
        self._factories = {}

    def init_app(self, app):
        self.default = app.config.get("ADAPTER") or self.default
        app.extensions["adapters"] = self

    def register(self, name, factory):
        self._factories[name] = factory

    def names(self):
        return sorted(self._factories)

    def create(self, spec=None):
        spec = spec or self.default
        name, _, argument = spec.partition(":")
        try:
            factory = self._factories[name]
        except KeyError:
            raise ValueError(
                f"unknown adapter {name!r}; available: {', '.join(self.names()) or 'none'}"
            ) from None
        return factory(argument) if argument else factory()


adapters = AdapterRegistry()
