# %% [markdown]
# # The command-line interface
#
# Every capability is also reachable from the shell. Records are printed
# as ``key=value`` lines.

# %%
import io
import tempfile
from pathlib import Path

from tcdepth.cli import main


def sh(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    print(f"$ tcdepth {' '.join(map(str, argv))}  (exit {code})")
    print(out.getvalue())


root = Path(tempfile.mkdtemp())
sh("synth", "--out", root, "--frames", 7, "--width", 160, "--height", 48, "--noise", 0.05)
manifest = root / "manifest.txt"

# %%
sh("warp", "--manifest", manifest, "--target", 3, "--source", 4)
sh("losses", "--manifest", manifest, "--target", 3, "--table")
sh("attn", "--manifest", manifest, "--frame", 3, "--out", root / "attn")
sh("tcm", "--manifest", manifest, "--table")
sh("fuse", "--manifest", manifest, "--ref", 3, "--out", root / "cloud.ply")
sh("gradcheck", "--loss", "geometric", "--seed", 7)
