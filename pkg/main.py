import sys

from dotenv import load_dotenv

load_dotenv()

# BLAS reads its thread caps when numpy is first imported
from app.configs import settings  # noqa: E402

settings.export_blas_threads()

from app.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
