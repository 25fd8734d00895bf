import io

import pytest

from attnsep.corpus import (CorpusError, OffsetToken, StyleDescriptor,
                            TokenizationMismatch, annotate_token_spans,
                            generate_corpus, load_bundled_contents,
                            load_bundled_styles, read_corpus_jsonl,
                            render_prompt, write_corpus_jsonl)


def test_template_wordings():
    cases = {
        1: "a painting of a giraffe in the cubism style",
        2: "a cubism painting of a giraffe",
        3: "a giraffe in the cubism style",
        4: "a giraffe with cubism style",
    }
    for tid, want in cases.items():
        spec = render_prompt(tid, "giraffe", "cubism")
        assert spec.prompt_text == want
        assert spec.prompt_text == spec.prompt_text.lower()
        assert not spec.prompt_text.endswith(".")


def test_spans_slice_back_to_labels():
    for tid in (1, 2, 3, 4):
        for content, style in (("giraffe", "cubism"),
                               ("traffic light", "vincent van gogh"),
                               ("tv", "ukiyo-e")):
            spec = render_prompt(tid, content, style)
            assert spec.content_text() == content
            assert spec.style_text() == style


def test_labels_are_lowercased():
    spec = render_prompt(1, "Giraffe", "Rembrandt", "artist")
    assert spec.content_label == "giraffe"
    assert spec.style_text() == "rembrandt"


def test_bad_labels_rejected():
    with pytest.raises(CorpusError):
        render_prompt(1, "", "cubism")
    with pytest.raises(CorpusError):
        render_prompt(1, " giraffe", "cubism")
    with pytest.raises(CorpusError):
        render_prompt(1, "gira{ffe", "cubism")
    with pytest.raises(CorpusError):
        render_prompt(5, "giraffe", "cubism")
    with pytest.raises(CorpusError):
        render_prompt(1, "giraffe", "cubism", style_kind="vibe")


def test_fix_articles():
    # default off: plain substitution
    off = render_prompt(1, "elephant", "impressionism")
    assert off.prompt_text == "a painting of a elephant in the impressionism style"
    on = render_prompt(1, "elephant", "impressionism", fix_articles=True)
    assert on.prompt_text == "a painting of an elephant in the impressionism style"
    assert on.content_text() == "elephant"
    on2 = render_prompt(2, "giraffe", "impressionism", fix_articles=True)
    assert on2.prompt_text == "an impressionism painting of a giraffe"
    assert on2.style_text() == "impressionism"


def test_bundled_lists():
    contents = load_bundled_contents()
    styles = load_bundled_styles()
    assert len(contents) == 80 and len(set(contents)) == 80
    assert len(styles) == 50
    kinds = [s.kind for s in styles]
    assert kinds.count("artist") == 23
    assert kinds.count("movement") == 27
    assert all(s.label == s.label.lower() for s in styles)


def test_corpus_cardinality_and_determinism():
    contents = load_bundled_contents()
    styles = load_bundled_styles()
    specs = generate_corpus(contents, styles)
    assert len(specs) == 16000
    assert len({s.prompt_text for s in specs}) == 16000
    assert [s.prompt_id for s in specs] == list(range(16000))
    again = generate_corpus(contents, styles)
    assert [(s.prompt_id, s.prompt_text) for s in again] == \
        [(s.prompt_id, s.prompt_text) for s in specs]
    # order: template major, then content, then style
    assert specs[0].template_id == 1 and specs[-1].template_id == 4
    assert specs[0].content_label == specs[49].content_label
    assert specs[0].style_label == specs[50].style_label


def test_duplicate_labels_rejected():
    styles = [StyleDescriptor("cubism", "movement")]
    with pytest.raises(CorpusError) as exc:
        generate_corpus(["cat", "dog", "cat"], styles)
    assert "cat" in str(exc.value)
    with pytest.raises(CorpusError):
        generate_corpus(["cat"], styles + [StyleDescriptor("Cubism", "movement")])


def test_jsonl_round_trip():
    specs = generate_corpus(["cat", "dog"],
                            [StyleDescriptor("cubism", "movement"),
                             StyleDescriptor("rembrandt", "artist")],
                            template_ids=(2, 3))
    buf = io.StringIO()
    write_corpus_jsonl(specs, buf)
    buf.seek(0)
    back = read_corpus_jsonl(buf)
    assert back == specs


def _words(prompt):
    toks = [OffsetToken("<s>", special=True)]
    i = 0
    while i < len(prompt):
        if prompt[i] == " ":
            i += 1
            continue
        j = prompt.find(" ", i)
        j = len(prompt) if j < 0 else j
        toks.append(OffsetToken(prompt[i:j], i, j))
        i = j
    toks.append(OffsetToken("</s>", special=True))
    return toks


def test_annotate_word_tokens():
    spec = render_prompt(1, "giraffe", "cubism")
    toks = _words(spec.prompt_text)
    content, style = annotate_token_spans(spec, toks)
    # <s> a painting of a giraffe in the cubism style </s>
    assert content == (5, 5) and style == (8, 8)
    assert toks[5].text == "giraffe" and toks[8].text == "cubism"


def test_annotate_multiword_and_subword():
    spec = render_prompt(2, "traffic light", "vincent van gogh")
    toks = _words(spec.prompt_text)
    content, style = annotate_token_spans(spec, toks)
    assert [t.text for t in toks[style[0]:style[1] + 1]] == \
        ["vincent", "van", "gogh"]
    assert [t.text for t in toks[content[0]:content[1] + 1]] == \
        ["traffic", "light"]

    # sub-word pieces inside the label are fine too
    spec = render_prompt(3, "giraffe", "cubism")
    c0, c1 = spec.content_char_span
    toks = [OffsetToken("<s>", special=True),
            OffsetToken("a", 0, 1),
            OffsetToken("gi", c0, c0 + 2), OffsetToken("raffe", c0 + 2, c1)]
    toks += [t for t in _words(spec.prompt_text)[3:] if not t.special]
    toks.append(OffsetToken("</s>", special=True))
    content, style = annotate_token_spans(spec, toks)
    assert content == (2, 3)


def test_annotate_rejects_boundary_crossing():
    spec = render_prompt(3, "giraffe", "cubism")
    c0, c1 = spec.content_char_span
    # one token swallows the label plus the following space and word
    bad = [OffsetToken("<s>", special=True),
           OffsetToken("a", 0, 1),
           OffsetToken(spec.prompt_text[c0:c1 + 3], c0, c1 + 3),
           OffsetToken("</s>", special=True)]
    with pytest.raises(TokenizationMismatch):
        annotate_token_spans(spec, bad)


def test_annotate_rejects_gaps_and_bad_offsets():
    spec = render_prompt(3, "giraffe", "cubism")
    c0, c1 = spec.content_char_span
    missing = [OffsetToken("<s>", special=True),
               OffsetToken("gi", c0, c0 + 2),  # "raffe" never tokenized
               OffsetToken("cubism", *spec.style_char_span),
               OffsetToken("</s>", special=True)]
    with pytest.raises(TokenizationMismatch):
        annotate_token_spans(spec, missing)

    wrong_text = _words(spec.prompt_text)
    wrong_text[2] = OffsetToken("elephant", wrong_text[2].start,
                                wrong_text[2].end)
    with pytest.raises(TokenizationMismatch):
        annotate_token_spans(spec, wrong_text)

    no_offsets = [OffsetToken("<s>", special=True),
                  OffsetToken("giraffe"), OffsetToken("cubism")]
    with pytest.raises(TokenizationMismatch):
        annotate_token_spans(spec, no_offsets)


def test_annotate_spans_never_cover_specials():
    spec = render_prompt(4, "giraffe", "pop art")
    toks = _words(spec.prompt_text)
    content, style = annotate_token_spans(spec, toks)
    for lo, hi in (content, style):
        assert all(not toks[i].special for i in range(lo, hi + 1))
