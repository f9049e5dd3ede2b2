#!/usr/bin/env python3
"""
os2 Launcher Script
Ensures correct Python path setup before starting the command-line tool.
"""
import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Now import and run the CLI
if __name__ == "__main__":
    from modules.main import main

    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n[SYSTEM] Run interrupted by user (Ctrl+C)")
        sys.exit(130)
    except Exception as e:
        print(f"[SYSTEM] ❌ CRITICAL: Unexpected error: {e}")
        raise
