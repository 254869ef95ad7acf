import sys

from app.core.config import configure_logging  # loads .env early

from app.cli.parser import parse_and_dispatch


def main() -> int:
    configure_logging()
    return parse_and_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
