"""Shared fixtures: a small hand-built corpus plus simulated panels.

The corpus is constructed so every indicator is an exact fraction that can
be checked by hand: one shared physics paper per window (10 citations), one
externally co-authored paper (5 citations), one international math paper
(8 citations) and one uncited solo paper. All four windows repeat the same
pattern, so panel values are constant across waves.
"""

import datetime

import pytest

from panelforge.clpm import ClpmSpec, fit_variants
from panelforge.corpus import (
    AuthorEntry,
    PublicationRecord,
    RankEntry,
    ResearcherRecord,
    make_windows,
)
from panelforge.synth import default_true_parameters, simulate_panel


def researcher(rid, gender="male", birth_year=1965, sds="FIS/01", uda="02",
               university_id="U1", ranks=((1999, 1),)):
    history = tuple(RankEntry(datetime.date(y, 10, 1), r) for y, r in ranks)
    return ResearcherRecord(rid, gender, birth_year, sds, uda, university_id, history)


def author(position, researcher_id=None, university_id=None, country="IT"):
    return AuthorEntry(position=position, country=country,
                       researcher_id=researcher_id, university_id=university_id)


def pub(pid, year, byline, citations=0, cats=("PHY",), doc_type="article"):
    return PublicationRecord(pid, year, doc_type, tuple(cats), citations, tuple(byline))


@pytest.fixture()
def windows():
    return make_windows(2001, 3, 4)


@pytest.fixture()
def roster():
    return {
        "r_ada": researcher("r_ada", gender="female", birth_year=1970,
                            ranks=((1999, 1), (2006, 2))),
        "r_bo": researcher("r_bo", birth_year=1965, ranks=((1998, 3),)),
        "r_cy": researcher("r_cy", birth_year=1972, sds="MAT/05", uda="01",
                           university_id="U2", ranks=((2000, 1), (2009, 4))),
    }


@pytest.fixture()
def pubs(windows):
    out = []
    for w in windows:
        y = w.start_year
        out.append(pub(f"p_ada_{w.index}", y, [
            author(1, "r_ada", "U1"),
            author(2, "r_bo", "U1"),
        ], citations=10))
        out.append(pub(f"p_bo_{w.index}", y, [
            author(1, "r_bo", "U1"),
            author(2, university_id="U3"),
        ], citations=5))
        out.append(pub(f"p_cy_{w.index}", y + 1, [
            author(1, "r_cy", "U2"),
            author(2, country="US"),
        ], citations=8, cats=("MAT",)))
        out.append(pub(f"p_solo_{w.index}", y + 2, [author(1, "r_ada", "U1")]))
    return out


def random_path_model(rng, k=4):
    """A random recursive path model with means, for gradient/refit checks.

    Returns the model plus a parameter dict at which the implied covariance
    is positive definite by construction.
    """
    from panelforge.semcore import CovarianceModel

    names = [f"y{i}" for i in range(k)]
    model = CovarianceModel(names)
    theta = {}
    for i, v in enumerate(names):
        model.mean(v, param=f"m_{v}")
        theta[f"m_{v}"] = float(rng.normal(0.0, 1.0))
        model.var(v, param=f"v_{v}")
        theta[f"v_{v}"] = float(rng.uniform(0.5, 2.0))
        for u in names[:i]:
            if rng.random() < 0.6:
                model.path(v, u, param=f"b_{v}_{u}")
                theta[f"b_{v}_{u}"] = float(rng.normal(0.0, 0.4))
    return model, theta


@pytest.fixture(scope="session")
def d_panel():
    return simulate_panel(default_true_parameters("D"), 1200, seed=20260214)


@pytest.fixture(scope="session")
def d_comparison(d_panel):
    return fit_variants(d_panel, ClpmSpec(), threads=4)
