import xml.etree.ElementTree as ET

import pytest

from awbem.svgplot import Guide, Series, loglog_svg

NS = "{http://www.w3.org/2000/svg}"


def test_guide_line_and_label():
    g = Guide(0.5, 100.0, 0.2)
    assert g.label == "n^-0.5"
    assert g.at(100.0) == 0.2
    assert g.at(400.0) == pytest.approx(0.1)


def test_plot_structure():
    text = loglog_svg(
        [Series("adaptive", [(12, 0.6), (100, 0.2), (1000, 0.07)]),
         Series("uniform", [(48, 0.5), (768, 0.25)], "square")],
        [Guide(0.25, 48, 0.5), Guide(0.5, 12, 0.6)],
        title="a < b & c",
    )
    root = ET.fromstring(text)
    assert root.tag == NS + "svg"
    assert len(root.findall(f"{NS}polyline")) == 2
    assert len(root.findall(f"{NS}circle")) == 3
    # two markers plus the background and frame rectangles
    assert len(root.findall(f"{NS}rect")) == 4
    dashed = [e for e in root.iter(NS + "line") if e.get("clip-path")]
    assert len(dashed) == 2
    labels = {e.text for e in root.iter(NS + "text")}
    assert {"adaptive", "uniform", "n^-0.25", "n^-0.5", "a < b & c", "1e1", "1e-2"} <= labels
    assert "<image" not in text and "href" not in text


def test_nonpositive_points_are_skipped():
    text = loglog_svg([Series("s", [(0, 1.0), (10, 0.0), (10, 0.5), (100, 0.1)])])
    root = ET.fromstring(text)
    assert len(root.findall(f"{NS}circle")) == 2


def test_empty_plot_rejected():
    with pytest.raises(ValueError):
        loglog_svg([Series("s", [(0, 1.0)])])
