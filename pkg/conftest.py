import os
import sys
import tempfile

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

os.environ.setdefault("RAAD_LOG_DIR", os.path.join(tempfile.gettempdir(), "raad-test-logs"))
os.environ.setdefault("RAAD_LOG_LEVEL", "WARNING")
