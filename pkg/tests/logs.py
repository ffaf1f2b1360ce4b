"""Random impression logs shared by the classifier tests."""
from hypothesis import strategies as st

from dualring.ad_classifier import AdImpression, CategoryNode

ROOTS = ("Arts", "Business", "Games", "Sports", "Travel")
PROFILES = ("r1", "r2", "r3")
APPS = ("appA", "appB")
URLS = tuple(f"https://ads{i}.example/c{i}" for i in range(12))


@st.composite
def impression_logs(draw, min_size=1, max_size=40):
    n = draw(st.integers(min_size, max_size))
    profiles = draw(st.lists(st.sampled_from(PROFILES), min_size=1, max_size=3, unique=True))
    times = sorted(draw(st.lists(st.integers(0, 100_000), min_size=n, max_size=n)))
    imps = [AdImpression(draw(st.sampled_from(URLS)), draw(st.sampled_from(("AdMob", "tp1"))),
                         t, draw(st.sampled_from(profiles)), draw(st.sampled_from(APPS)))
            for t in times]
    node = st.one_of(st.none(), st.sampled_from(ROOTS).map(lambda r: CategoryNode((r,))))
    mapping = {u: draw(node) for u in URLS}
    return imps, mapping


def node_sets():
    return st.lists(st.sampled_from(ROOTS), max_size=3).map(
        lambda rs: [CategoryNode((r,)) for r in rs])


@st.composite
def target_maps(draw, keys):
    return {k: draw(node_sets()) for k in keys}
