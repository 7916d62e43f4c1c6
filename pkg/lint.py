""" python lint.py [PATHS] --threshold T: pylint every path, fail if any score is below T (0-10) """
import logging
import sys

import click
from pylint.lint import Run
from rich.logging import RichHandler

# a path fails when its score (out of 10.0) is below this
DEFAULT_THRESHOLD = 10.0
DEFAULT_PATHS = ("eosedit",)

log = logging.getLogger("lint")


def score(path: str) -> float:
    """pylint score of a package or module."""
    results = Run([path], exit=False)
    try:
        return results.linter.stats.global_note
    except AttributeError:
        return results.linter.stats["global_note"]


@click.command()
@click.argument("paths", nargs=-1)
@click.option(
    "-t", "--threshold", default=DEFAULT_THRESHOLD, show_default=True, help="Lowest passing score."
)
def main(paths, threshold: float):
    """Lint PATHS (the eosedit package by default)."""
    logging.basicConfig(level=logging.INFO, format="%(message)s", handlers=[RichHandler()])
    failed = []
    for path in paths or DEFAULT_PATHS:
        log.info(f"PyLint starting | path: {path} | threshold: {threshold}")
        final_score = score(path)
        if final_score < threshold:
            log.error(f"PyLint failed | path: {path} | score: {final_score:.2f}")
            failed.append(path)
        else:
            log.info(f"PyLint passed | path: {path} | score: {final_score:.2f}")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()  # pylint:disable=no-value-for-parameter
