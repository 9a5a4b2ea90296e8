import numpy as np
import pytest


def _write_ppm(path, rgb):
    h, w = rgb.shape[1:]
    data = (np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0).tobytes()
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + data)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """A 12x12 manifest dataset with 3 ToI and 3 IrT classes, 8 images per split."""
    root = tmp_path_factory.mktemp("tiny")
    rng = np.random.default_rng(0)
    (root / "classes.tsv").write_text(
        "".join(f"TOI\tdigit{i}\n" for i in range(3)) + "".join(f"IRT\titem{i}\n" for i in range(3))
    )
    splits = {"source_toi": ("TOI", 0), "source_irt": ("IRT", 0),
              "target_irt": ("IRT", 1), "target_toi_eval": ("TOI", 1)}
    for name, (task, domain) in splits.items():
        (root / name).mkdir()
        lines = []
        for i in range(8):
            rel = f"{name}/{i}.ppm"
            _write_ppm(root / rel, rng.random((3, 12, 12)))
            lines.append(f"{rel}\t{i % 3}\t{task}\t{domain}\n")
        (root / f"{name}.tsv").write_text("".join(lines))
    return root
