import os
import re
import json
import logging
import argparse
from typing import Dict, List, Optional

from lxml import etree

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

XLINK = "{http://www.w3.org/1999/xlink}href"


def parse_args():
    parser = argparse.ArgumentParser(
        description="Convert JATS XML articles into an article corpus JSONL"
    )
    parser.add_argument(
        "inputs",
        nargs="+",
        help="JATS XML files or directories holding them",
    )
    parser.add_argument(
        "-o",
        "--out",
        required=True,
        help="Article corpus JSONL to write",
    )
    parser.add_argument(
        "-i",
        "--image-dir",
        default="",
        help="Prefix of image references, relative to the corpus root",
    )
    parser.add_argument(
        "-x",
        "--image-ext",
        default=".jpg",
        help="Extension appended to graphic hrefs without one",
    )
    return parser.parse_args()


def _text(node) -> str:
    return re.sub(r"\s+", " ", "".join(node.itertext())).strip()


def _pmcid(root) -> Optional[str]:
    for node in root.iter("article-id"):
        if node.get("pub-id-type") in ("pmc", "pmcid"):
            value = (node.text or "").strip()
            return value if value.upper().startswith("PMC") else f"PMC{value}"
    return None


def _reference_paragraphs(root) -> Dict[str, List[str]]:
    """Body paragraphs citing each figure id, document order"""
    cited: Dict[str, List[str]] = {}
    body = root.find(".//body")
    if body is None:
        return cited
    for para in body.iter("p"):
        targets = set()
        for xref in para.iter("xref"):
            if xref.get("ref-type") == "fig":
                targets.update((xref.get("rid") or "").split())
        text = _text(para)
        for target in sorted(targets):
            cited.setdefault(target, []).append(text)
    return cited


def article_from_jats(source, image_dir: str = "", image_ext: str = ".jpg") -> Optional[dict]:
    """
    Build one ArticleRecord dict from a JATS document

    Parameters:
        source: Path or file object of the XML document
        image_dir (str): Prefix of the image references
        image_ext (str): Extension for graphic hrefs that carry none

    Returns:
        dict: {"pmcid", "figures": [...]}, None when the PMCID is missing
    """
    root = etree.parse(source).getroot()
    pmcid = _pmcid(root)
    if pmcid is None:
        logger.warning(f"No PMCID in {source}, skipped")
        return None

    cited = _reference_paragraphs(root)
    figures = []
    for number, fig in enumerate(root.iter("fig"), 1):
        graphic = fig.find(".//graphic")
        if graphic is None or not graphic.get(XLINK):
            continue
        href = graphic.get(XLINK)
        if not os.path.splitext(href)[1]:
            href += image_ext
        caption = fig.find("caption")
        fig_id = fig.get("id") or f"fig{number}"
        figures.append(
            {
                "figure_id": fig_id,
                "image_ref": os.path.join(image_dir, pmcid, href) if image_dir else href,
                "caption": _text(caption) if caption is not None else "",
                "ref_paragraphs": cited.get(fig_id, []),
            }
        )
    return {"pmcid": pmcid, "figures": figures}


def collect_inputs(inputs: List[str]) -> List[str]:
    files = []
    for item in inputs:
        if os.path.isdir(item):
            for name in sorted(os.listdir(item)):
                if name.endswith((".xml", ".nxml")):
                    files.append(os.path.join(item, name))
        else:
            files.append(item)
    return files


def main():
    args = parse_args()

    records, seen = [], set()
    for path in collect_inputs(args.inputs):
        try:
            record = article_from_jats(path, args.image_dir, args.image_ext)
        except (OSError, etree.XMLSyntaxError) as e:
            logger.warning(f"Cannot parse {path}: {e}")
            continue
        if record is None or record["pmcid"] in seen:
            continue
        seen.add(record["pmcid"])
        records.append(record)

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    n_figures = sum(len(r["figures"]) for r in records)
    logger.info(f"Wrote {len(records)} articles with {n_figures} figures to {args.out}")


if __name__ == "__main__":
    main()
    # python -m cprep.jats_to_records ./pmc_xml -o ./corpus/articles.jsonl -i images
