#!/usr/bin/env python3
"""Regenerates the encoder-produced fixtures under tests/fixtures/.

Needs an ffmpeg build with libmp3lame and libopus (set FFMPEG, or have
`ffmpeg` on PATH, or `pip install imageio-ffmpeg`) and Pillow for JPEG.
Output is deterministic for a given ffmpeg/Pillow build.
"""

import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

from PIL import Image

ROOT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def find_ffmpeg():
    if os.environ.get("FFMPEG"):
        return os.environ["FFMPEG"]
    if shutil.which("ffmpeg"):
        return shutil.which("ffmpeg")
    try:
        import imageio_ffmpeg

        return imageio_ffmpeg.get_ffmpeg_exe()
    except ImportError:
        sys.exit("no ffmpeg found; set FFMPEG or pip install imageio-ffmpeg")


# lavfi sources; two rough "classes": tonal and noisy.
SIGNALS = [
    ("tone440", "tonal", "sine=frequency=440:duration={d}"),
    ("tone1k", "tonal", "sine=frequency=1000:duration={d}"),
    ("chord", "tonal", "aevalsrc=0.3*sin(2*PI*330*t)+0.3*sin(2*PI*415*t)+0.3*sin(2*PI*495*t):d={d}"),
    ("sweep", "tonal", "aevalsrc=0.5*sin(2*PI*(200+300*t)*t):d={d}"),
    ("pink", "noisy", "anoisesrc=d={d}:c=pink:a=0.3:seed=11"),
    ("white", "noisy", "anoisesrc=d={d}:c=white:a=0.2:seed=12"),
    ("brown", "noisy", "anoisesrc=d={d}:c=brown:a=0.4:seed=13"),
    ("bursts", "noisy", "aevalsrc=0.6*random(0)*lt(mod(t\\,0.5)\\,0.1):d={d}"),
]

# (kbps, sample rate, extra lame flags). 20 and 26 kbps are not Layer III
# table rates, so they run as ABR at MPEG-2 rates; 32 kbps is CBR at both
# 44.1 kHz (MPEG-1, ~104-byte frames) and 32 kHz (MPEG-1, 144-byte frames).
MP3_SETTINGS = [
    (20, 22050, ["-abr", "1"]),
    (26, 24000, ["-abr", "1"]),
    (32, 44100, []),
    (32, 32000, []),
]


def run(cmd):
    subprocess.run(cmd, check=True)


def make_mp3(ffmpeg):
    out = ROOT / "mp3"
    out.mkdir(parents=True, exist_ok=True)
    records = []
    i = 0
    for name, cls, src in SIGNALS:
        for kbps, rate, extra in MP3_SETTINGS:
            tags = []
            if i % 3 == 1:
                tags = ["-write_id3v1", "1"]
            elif i % 3 == 2:
                tags = ["-id3v2_version", "0", "-write_xing", "0"]
            path = out / f"{name}_{kbps}k_{rate}.mp3"
            run([ffmpeg, "-hide_banner", "-loglevel", "error", "-y", "-f", "lavfi", "-i", src.format(d=3),
                 "-ac", "1", "-ar", str(rate), "-c:a", "libmp3lame", "-b:a", f"{kbps}k", *extra, *tags,
                 "-fflags", "+bitexact", "-flags:a", "+bitexact", str(path)])
            records.append({"path": f"mp3/{path.name}", "label": 0 if cls == "tonal" else 1,
                            "split": "train" if i % 4 != 3 else "eval", "fold": i % 5 + 1})
            i += 1
    run([ffmpeg, "-hide_banner", "-loglevel", "error", "-y", "-f", "lavfi", "-i", SIGNALS[2][2].format(d=5),
         "-ac", "1", "-ar", "32000", "-c:a", "libmp3lame", "-b:a", "32k", "-fflags", "+bitexact",
         "-flags:a", "+bitexact", str(ROOT / "clip_5s_32k.mp3")])
    with open(ROOT / "audio_manifest.jsonl", "w") as f:
        f.write(json.dumps({"num_classes": 2, "task": "single_label"}) + "\n")
        for r in records:
            f.write(json.dumps(r) + "\n")


def make_opus(ffmpeg):
    out = ROOT / "opus"
    out.mkdir(parents=True, exist_ok=True)
    frame_durations = [20, 20, 10, 40, 60, 20]
    for i, (name, _, src) in enumerate(SIGNALS[:6]):
        for j, dur in enumerate((2, 3)):
            fd = frame_durations[(i + j) % len(frame_durations)]
            path = out / f"{name}_{dur}s_fd{fd}.opus"
            run([ffmpeg, "-hide_banner", "-loglevel", "error", "-y", "-f", "lavfi", "-i", src.format(d=dur),
                 "-ac", "1", "-c:a", "libopus", "-b:a", "29k", "-frame_duration", str(fd),
                 "-fflags", "+bitexact", "-flags:a", "+bitexact", str(path)])


def make_jpeg():
    out = ROOT / "jpeg"
    out.mkdir(parents=True, exist_ok=True)
    tiny = Image.new("RGB", (8, 8))
    tiny.putdata([((x * 31) % 256, (y * 29) % 256, ((x + y) * 17) % 256) for y in range(8) for x in range(8)])
    tiny.save(out / "tiny_8x8_q75.jpg", quality=75)

    big = Image.new("RGB", (96, 64))
    big.putdata([((x * 7 + y * 3) % 256, (x * y) % 256, (255 - x * 2) % 256) for y in range(64) for x in range(96)])
    big.save(out / "grad_96x64_q75.jpg", quality=75)
    big.save(out / "grad_96x64_q75_rst.jpg", quality=75, restart_marker_blocks=6)
    big.save(out / "grad_96x64_q75_progressive.jpg", quality=75, progressive=True)
    big.convert("L").save(out / "gray_96x64_q75_rst_rows.jpg", quality=75, restart_marker_rows=1)


def main():
    ffmpeg = find_ffmpeg()
    make_mp3(ffmpeg)
    make_opus(ffmpeg)
    make_jpeg()


if __name__ == "__main__":
    main()
