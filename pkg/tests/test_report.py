import xml.etree.ElementTree as ET

import pytest

from pantiny.report import EmptyReportError, bar_chart, build_report, line_chart, ranking, read_table

SWEEP = """lambda_l1,lambda_ssim,lambda_focal,dataset,psnr,ssim,sam,ergas
1,0,0,synthA,25.0000,0.8000,0.0500,3.0000
1.5,4,1.5,synthA,26.0000,0.8500,0.0400,2.5000
1,0,0,synthB,27.0000,0.8200,0.0600,2.0000
1.5,4,1.5,synthB,27.5000,0.8600,0.0550,1.9000
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("text,kind", [
    (SWEEP, "sweep"),
    ("train_domain,test_domain,psnr,ssim,sam,ergas\nsynthA,synthA,25,0.8,0.05,3\n", "cross"),
    ("dataset,model,d_lambda,d_s,qnr\nsynthA,gs,0.1,0.2,0.72\n", "metrics"),
    ("step,lr,loss_total,loss_l1,loss_ssim,loss_focal\n1,0.0005,1.0,0.1,0.2,0.01\n", "trainlog"),
])
def test_table_kinds(tmp_path, text, kind):
    assert read_table(write(tmp_path, "t.csv", text)).kind == kind


def test_empty_and_unknown_tables(tmp_path):
    with pytest.raises(EmptyReportError):
        read_table(write(tmp_path, "e.csv", ""))
    with pytest.raises(EmptyReportError):
        read_table(write(tmp_path, "h.csv", "dataset,model,psnr\n"))
    with pytest.raises(ValueError):
        read_table(write(tmp_path, "u.csv", "a,b\n1,2\n"))
    with pytest.raises(ValueError):
        read_table(write(tmp_path, "r.csv", "dataset,model,psnr\nx,y\n"))


def test_sweep_report_has_one_svg_per_metric_per_domain(tmp_path):
    written, summary = build_report([write(tmp_path, "sweep.csv", SWEEP)], tmp_path / "out")
    svgs = sorted(p.name for p in written if p.suffix == ".svg")
    assert svgs == sorted(f"sweep_{d}_{m}.svg" for d in ("synthA", "synthB") for m in ("psnr", "ssim", "sam", "ergas"))
    for p in written:
        if p.suffix == ".svg":
            assert ET.parse(p).getroot().tag == "{http://www.w3.org/2000/svg}svg"
    assert (tmp_path / "out" / "summary.txt").read_text() == summary


def test_ranking_prefers_better_metrics(tmp_path):
    text = ranking(read_table(write(tmp_path, "sweep.csv", SWEEP)))
    lines = text.splitlines()
    # the (1.5, 4, 1.5) row wins every chart: higher PSNR/SSIM, lower SAM/ERGAS
    assert lines[1].split()[1:5] == ["(1.5,", "4,", "1.5)", "mean"]
    assert "mean rank 1.00" in lines[1] and "mean rank 2.00" in lines[2]


def test_trainlog_report(tmp_path):
    log = "step,lr,loss_total,loss_l1,loss_ssim,loss_focal\n" + "".join(
        f"{s},0.0005,{1.0 / s},{0.1 / s},{0.2 / s},{0.01 / s}\n" for s in range(1, 51))
    written, summary = build_report([write(tmp_path, "log.csv", log)], tmp_path / "o")
    assert [p.name for p in written] == ["log_loss.svg", "summary.txt"]
    assert "50 steps, loss 1.0000 -> 0.0200" in summary
    root = ET.parse(written[0]).getroot()
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 4


def test_charts_handle_infinite_and_flat_values():
    svg = bar_chart("t", "psnr", ["a", "b"], [float("inf"), 20.0])
    assert ET.fromstring(svg).tag.endswith("svg") and ">inf<" in svg
    svg = line_chart("t", "x", ["1", "2"], {"s": [3.0, 3.0]})
    assert ET.fromstring(svg).tag.endswith("svg")


def test_labels_are_escaped():
    svg = bar_chart("a<b & c", "y", ["<x>"], [1.0])
    ET.fromstring(svg)
    assert "&lt;x&gt;" in svg
