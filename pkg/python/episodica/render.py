"""Text rendering and packaged resources."""
import logging
from importlib import resources

from jinja2 import Environment, PackageLoader

LOG = logging.getLogger(__name__)


def format_float(value, digits=4):
    return f"{value:.{digits}f}"


def _setup_jinja_env(**options):
    env = Environment(loader=PackageLoader(__package__, "templates"), **options)
    env.filters["format_float"] = format_float
    return env


ENV = _setup_jinja_env(trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)


def render(name, **kwargs) -> str:
    LOG.debug("Rendering '%s'", name)
    return ENV.get_template(name).render(**kwargs)


def resource_text(name) -> str:
    """Contents of a file shipped in ``episodica/data``."""
    return resources.files(f"{__package__}.data").joinpath(name).read_text(encoding="utf-8")
