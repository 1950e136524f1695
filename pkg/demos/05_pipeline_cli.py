"""Drive the whole pipeline through the command-line interface.

Same flow a shell user would run — spectra, selection, scenes, encoding,
training, reconstruction, scoring — executed via cli.run() in a scratch
directory. Every artifact lands next to a key=value manifest; the last
section replays one manifest and shows the bytes come back identical.
"""

import hashlib
import os
import tempfile

from snapspec import cli

root = tempfile.mkdtemp(prefix="snapspec_demo_")
print(f"working in {root}\n")


def sh(*argv):
    print("$ snapspec " + " ".join(argv))
    code = cli.run(list(argv))
    assert code == 0, f"exit {code}"


j = lambda name: os.path.join(root, name)

sh("gen-spectra", "--n", "120", "--seed", "3", "--bands", "8",
   "--gmax", "0.6", "--out", j("bank.spc"))
sh("select-filters", "--in", j("bank.spc"), "--k", "16", "--method", "fps",
   "--out", j("filters.spc"))
sh("gen-scenes", "--n", "6", "--height", "32", "--width", "32",
   "--bands", "8", "--seed", "11", "--out", j("scenes"))
sh("encode", "--scene", j("scenes/scene_000.hsc"), "--filters",
   j("filters.spc"), "--mosaic-s", "4", "--out", j("meas.msr"))
sh("train", "--scenes", j("scenes"), "--filters", j("filters.spc"),
   "--stages", "3", "--channels", "8", "--epochs", "8", "--seed", "0",
   "--out", j("model.erp"))
sh("reconstruct", "--measurement", j("meas.msr"), "--filters",
   j("filters.spc"), "--model", j("model.erp"), "--out", j("recon.hsc"))
sh("reconstruct", "--measurement", j("meas.msr"), "--filters",
   j("filters.spc"), "--classical", "--stages", "40", "--out", j("ista.hsc"))
sh("evaluate", "--recon", j("recon.hsc"), "--truth", j("scenes/scene_000.hsc"),
   "--out", j("learned.csv"))
sh("evaluate", "--recon", j("ista.hsc"), "--truth", j("scenes/scene_000.hsc"),
   "--out", j("classical.csv"))
sh("export-plots", "--in", j("filters.spc"), "--out", j("plots"))

print("\nlearned solver:")
print(open(j("learned.csv")).read().strip())
print("classical solver:")
print(open(j("classical.csv")).read().strip())

print("\nthe measurement's manifest:")
print(open(j("meas.msr.manifest.txt")).read().strip())

digest = lambda p: hashlib.sha256(open(p, "rb").read()).hexdigest()
before = digest(j("meas.msr"))
print("\nreplaying the manifest ...")
sh("rerun", "--manifest", j("meas.msr.manifest.txt"))
after = digest(j("meas.msr"))
print(f"byte-identical after rerun: {before == after}")
