"""A 'singleton' module for registering apprise notifiers."""

import apprise

notifier = apprise.Apprise()


def add_notification_service(url: str) -> None:
    """Add apprise URI with support for tags e.g. ERROR,INFO=PROTOCOL://settings."""
    config = apprise.AppriseConfig()
    config.add_config(url, format="text")

    # Without tags only errors are sent, a sweep logs far too much at INFO to forward everything
    if not config.servers()[0].tags:
        config.servers()[0].tags = {"ERROR"}

    notifier.add(config)


def notify_finished(command: str, summary: str) -> None:
    """Sends a completion message for a long running command to every notifier tagged `INFO`."""
    if notifier.servers:
        notifier.notify(title=f"broadcast-mac {command} finished", body=summary, tag=["INFO"])
