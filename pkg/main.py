"""
KGEP command-line application - app recommendation over a knowledge graph

Pipeline stages:
- Dataset ingestion, cold-start filtering and 70/10/20 split
- LDA Content-Topics over app readmes
- App recommendation knowledge graph (13 entity kinds, 18 relations)
- TransD general embedding
- User-specific embedding propagation trained with negative sampling
- Top-K evaluation against UserCF and popularity baselines
"""

import sys
from pathlib import Path

# Add backend directory to Python path so we can import app modules
backend_dir = Path(__file__).parent / "backend"
sys.path.insert(0, str(backend_dir))

# Now we can import from app
from app.cli.runner import configure_logging, run
from app.config import settings


if __name__ == "__main__":
    configure_logging(settings.LOG_LEVEL)
    sys.exit(run(sys.argv[1:]))
