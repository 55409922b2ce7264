"""Regenerate the reference ruler ROI shipped in src/cephscale/data/."""
from pathlib import Path

from cephscale.cornerdetect import write_reference_annotation
from cephscale.imagecore import crop, write_image
from cephscale.synth import SceneParams, generate_image

DATA = Path(__file__).resolve().parents[1] / "src" / "cephscale" / "data"


def main():
    params = SceneParams(width=1960, height=2450, pmr_true=0.1, incline_deg=0.0,
                         ruler_x=1560.0, ruler_y=420.0, noise_sigma=2.0, seed=1234)
    img, gt = generate_image(params)
    w, L = gt.scale_width_px, params.ruler_length_px
    x0 = int(params.ruler_x - 3 * w)
    y0 = int(params.ruler_y - 0.3 * L)
    roi, (ox, oy) = crop(img, (x0, y0, int(7 * w), int(1.6 * L)))
    DATA.mkdir(parents=True, exist_ok=True)
    write_image(DATA / "reference.png", roi)
    upper = (gt.upper[0] - ox, gt.upper[1] - oy)
    lower = (gt.lower[0] - ox, gt.lower[1] - oy)
    write_reference_annotation(DATA / "reference.txt", upper, lower, w)
    print(f"reference ROI {roi.shape[1]}x{roi.shape[0]}, corners {upper} {lower}, width {w:.2f}")


if __name__ == "__main__":
    main()
