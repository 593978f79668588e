import io

from cprep.hpo_stats import keyword_table
from cprep.jats_to_records import article_from_jats, collect_inputs

JATS = b"""<?xml version="1.0"?>
<article xmlns:xlink="http://www.w3.org/1999/xlink">
  <front>
    <article-meta>
      <article-id pub-id-type="pmid">123</article-id>
      <article-id pub-id-type="pmc">4242</article-id>
    </article-meta>
  </front>
  <body>
    <p>Hands are shown in <xref ref-type="fig" rid="F1">Figure 1</xref>.</p>
    <p>Unrelated   text.</p>
    <p>See <xref ref-type="fig" rid="F1 F2">Figures 1 and 2</xref> for the spine.</p>
    <fig id="F1">
      <caption><p>Arachnodactyly of both   hands.</p></caption>
      <graphic xlink:href="hands_g001"/>
    </fig>
    <fig id="F2">
      <caption><p>Scoliosis on X-ray.</p></caption>
      <graphic xlink:href="spine_g002.png"/>
    </fig>
    <fig id="F3">
      <caption><p>No graphic here.</p></caption>
    </fig>
  </body>
</article>
"""


class TestJatsConversion:
    def test_article(self):
        record = article_from_jats(io.BytesIO(JATS), image_dir="images")
        assert record["pmcid"] == "PMC4242"
        assert [f["figure_id"] for f in record["figures"]] == ["F1", "F2"]
        first, second = record["figures"]
        assert first["caption"] == "Arachnodactyly of both hands."
        assert first["image_ref"] == "images/PMC4242/hands_g001.jpg"
        assert second["image_ref"] == "images/PMC4242/spine_g002.png"
        assert first["ref_paragraphs"] == [
            "Hands are shown in Figure 1.",
            "See Figures 1 and 2 for the spine.",
        ]
        assert second["ref_paragraphs"] == ["See Figures 1 and 2 for the spine."]

    def test_plain_image_refs(self):
        record = article_from_jats(io.BytesIO(JATS), image_ext=".tif")
        assert record["figures"][0]["image_ref"] == "hands_g001.tif"

    def test_missing_pmcid(self):
        assert article_from_jats(io.BytesIO(b"<article><body/></article>")) is None

    def test_collect_inputs(self, tmp_path):
        for name in ("b.nxml", "a.xml", "notes.txt"):
            (tmp_path / name).write_text("<article/>")
        extra = str(tmp_path / "other.xml")
        assert collect_inputs([str(tmp_path), extra]) == [
            str(tmp_path / "a.xml"),
            str(tmp_path / "b.nxml"),
            extra,
        ]


def test_keyword_table(toy_graph):
    table = keyword_table(toy_graph)
    assert list(table.columns) == ["keyword", "term_id", "name"]
    assert set(table["term_id"]) == {"HP:0001166", "HP:0002650", "HP:0000545", "HP:0001083", "HP:0031933"}
    spider = table[table["keyword"] == "spider fingers"]
    assert spider["name"].tolist() == ["Arachnodactyly"]
    assert len(table) == 8
    assert "dolichodactyly" not in set(table["keyword"])
