"""Module for useful tools in aggne."""

# flake8: noqa

from aggne.utils.logging import logger, set_log_level
