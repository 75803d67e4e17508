"""Write every named variant of the reference run as an INI file for ``donlab train``.

    python scripts/write_configs.py configs/
"""

import sys
from pathlib import Path

from donlab.pipeline.config import save_config
from donlab.pipeline.presets import VARIANTS, variant_config


def main(out="configs"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name in VARIANTS:
        save_config(variant_config(name), out / f"{name}.ini")
        print(out / f"{name}.ini")


if __name__ == "__main__":
    main(*sys.argv[1:])
