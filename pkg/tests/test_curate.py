import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from listingforge.curate import (Caption, CurationError, ImageReadError, VerifiedListing,
                                 caption_listing, curate_listings, file_image_loader,
                                 parse_verifier_reply, run_curation, verify_aspects, verify_lexical)
from listingforge.endpoints import ChatResponse, MockEndpoint, ProtocolError
from listingforge.ingest import Listing

CAPTIONER, VERIFIER = MockEndpoint("caption"), MockEndpoint("verify")
ASPECTS = (("Color", "Red"), ("Material", "Leather"), ("MPN", "Z9"))


def bag(lid="a", aspects=ASPECTS):
    return Listing(lid, "Bag", ("Bags",), aspects, (f"{lid}.png",))


def loader(ref):
    return b"\x89PNG fake"


class Replying:
    name = model_name = "scripted"

    def __init__(self, text):
        self.text = text

    def complete(self, req, context=None):
        return ChatResponse(self.text)


def test_caption_contains_values_and_is_deterministic():
    c1 = caption_listing(bag(aspects=(("Color", "Blue"),)), CAPTIONER, loader)
    c2 = caption_listing(bag(aspects=(("Color", "Blue"),)), CAPTIONER, loader)
    assert "blue" in c1.text.lower() and c1 == c2
    with pytest.raises(ImageReadError):
        caption_listing(bag(), CAPTIONER, lambda ref: b"")


def test_lexical_example():
    cap = Caption("a", "A red leather Gucci handbag with gold chain", "m")
    v = verify_aspects(bag(), cap, "lexical")
    assert v.verified_aspects == (("Color", "Red"), ("Material", "Leather"))
    assert verify_aspects(bag(aspects=()), cap, "lexical").verified_aspects == ()


def test_llm_name_intersection():
    cap = Caption("a", "whatever", "m")
    v = verify_aspects(bag(), cap, "llm", Replying("Color, Material"))
    assert v.verified_aspects == (("Color", "Red"), ("Material", "Leather"))
    v = verify_aspects(bag(), cap, "llm", Replying("color, Shape."))
    assert v.verified_aspects == (("Color", "Red"),)


def test_verifier_reply_grammar():
    assert parse_verifier_reply(" Color ,Material. ") == ["Color", "Material"]
    assert parse_verifier_reply("NONE") == []
    for bad in ("", "Color,,Material", "Color\nMaterial"):
        with pytest.raises(ProtocolError):
            parse_verifier_reply(bad)


def test_mismatched_caption():
    with pytest.raises(CurationError):
        verify_aspects(bag("a"), Caption("b", "x", "m"), "lexical")


@given(st.text(max_size=30), st.text(max_size=30))
def test_lexical_monotone(caption, extra):
    aspects = (("A", "red"), ("B", "x y"), ("C", caption[:3]), ("D", extra[:2]))
    base = set(verify_lexical(aspects, caption))
    assert base <= set(verify_lexical(aspects, caption + extra))


def test_run_curation_examples(tmp_path):
    listings = [bag("a", ASPECTS), bag("b", ASPECTS[:2]), bag("c", ASPECTS[:1])]
    src = tmp_path / "in.jsonl"
    src.write_text("".join(json.dumps(l.to_dict()) + "\n" for l in listings))
    for l in listings:
        (tmp_path / l.image_refs[0]).write_bytes(b"png")
    out = tmp_path / "out.jsonl"
    stats = run_curation(src, out, "lexical", CAPTIONER, None, images_dir=tmp_path)
    assert stats.aspects_verified == 6 and stats.verification_rate == 1.0
    first = out.read_bytes()
    run_curation(src, out, "llm", CAPTIONER, VERIFIER, images_dir=tmp_path, parallelism=3)
    run_curation(src, out, "lexical", CAPTIONER, None, images_dir=tmp_path, parallelism=3)
    assert out.read_bytes() == first
    recs = [json.loads(x) for x in first.decode().splitlines()]
    assert [r["listing_id"] for r in recs] == ["a", "b", "c"]
    assert set(recs[0]) >= {"listing_id", "caption", "verified_aspects", "flag_empty"}
    assert VerifiedListing.from_record(recs[0]).verified_aspects == ASPECTS


def test_empty_verified_is_flagged_and_failures_counted(tmp_path):
    class Fixed:
        name = model_name = "fixed"

        def complete(self, req, context=None):
            return ChatResponse("A plain photo.")

    l = bag("z", (("A", "one"), ("B", "two"), ("C", "three"), ("D", "four")))
    missing = bag("gone")
    (tmp_path / "z.png").write_bytes(b"png")
    results, stats = curate_listings([l, missing], "lexical", Fixed(), None,
                                     file_image_loader(tmp_path))
    assert results[1] is None and stats.failures == 1
    assert results[0].flag_empty and stats.listings_out == 1 and stats.verification_rate == 0


def test_empty_batch(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text("")
    stats = run_curation(src, tmp_path / "o.jsonl", "lexical", CAPTIONER, None)
    assert stats.listings_in == stats.listings_out == stats.aspects_in == 0
    assert (tmp_path / "o.jsonl").read_text() == ""


def test_remote_refs_are_not_fetched():
    with pytest.raises(ImageReadError):
        file_image_loader()("https://example.com/a.jpg")
