import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from app.adapters.cli.commands import main as cli_main  # noqa: E402


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
