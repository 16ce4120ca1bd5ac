"""
Small three-area world used across the tests.

Areas A, B and C each grow wheat and maize (inputless ``crop`` output) and raise beef in a ``feedlot`` fed with
maize. Every exporter sends half of its exports of an item to each of the two other areas.
"""
import os
from typing import Optional

import numpy as np
from scipy import sparse

from src.catalog import Catalog, HdiEntry, Registry, Unit, write_catalog
from src.parameters import ParameterSet, SparseItemMatrix, write_parameter_set

A, B, C = 0, 1, 2
WHEAT, MAIZE, BEEF = 0, 1, 2
CROP, FEEDLOT = 0, 1

WHEAT_OUTPUT = (6000.0, 4000.0, 2000.0)
MAIZE_OUTPUT = (3000.0, 5000.0, 1000.0)
BEEF_STOCK = 10000.0
POPULATIONS = {"A": 1e6, "B": 2e6, "C": 5e5}

ETA_EXP = {WHEAT: 0.4, MAIZE: 0.3, BEEF: 0.0}
ETA_PROD = {WHEAT: 0.0, MAIZE: 0.5, BEEF: 0.0}
FEED_RATE = 0.5
FEED_SHARE = 0.6


def make_catalog(populations: Optional[dict] = None) -> Catalog:
    areas = Registry("area", ["A", "B", "C"], ["Alpha", "Beta", "Gamma"])
    items = Registry("item", ["wheat", "maize", "beef"], ["Wheat", "Maize", "Beef"])
    processes = Registry("process", ["crop", "feedlot"], ["Crop growing", "Feedlot"])
    return Catalog(
        areas,
        items,
        processes,
        {"wheat": "cereals", "maize": "cereals", "beef": "ungrouped"},
        POPULATIONS if populations is None else populations,
        hdi={"A": HdiEntry("very high", 0.9), "B": HdiEntry("high", 0.7), "C": HdiEntry("low", 0.5)},
        units={"beef": Unit.HEADS},
    )


def uniform_trade(n_areas: int = 3) -> dict:
    """
    ``{item: {exporter: {importer: share}}}`` with every exporter splitting evenly over the other areas.
    """
    split = {exporter: {importer: 1.0 / (n_areas - 1) for importer in range(n_areas) if importer != exporter}
             for exporter in range(n_areas)}
    return {WHEAT: split, MAIZE: {exporter: dict(shares) for exporter, shares in split.items()}}


def make_params(
        year: int = 2000,
        catalog: Optional[Catalog] = None,
        trade: Optional[dict] = None,
        x0: Optional[dict] = None,
        beta: Optional[dict] = None,
        eta_exp: Optional[dict] = None,
        eta_prod: Optional[dict] = None,
) -> ParameterSet:
    """
    :param trade: ``{item: {exporter: {importer: share}}}``, uniform when omitted
    :param x0: ``{(area, item): amount}`` overrides
    :param beta: ``{(area, item, process): rate}`` overrides
    :param eta_exp: ``{(area, item): share}`` overrides
    :param eta_prod: ``{(area, item): share}`` overrides
    """
    catalog = catalog or make_catalog()
    n_areas, n_items, n_processes = catalog.n_areas, catalog.n_items, catalog.n_processes
    n_sectors = n_areas * n_items

    def sector(area, item):
        return area * n_items + item

    rates = {}
    for area in range(n_areas):
        rates[(area, WHEAT, CROP)] = WHEAT_OUTPUT[area]
        rates[(area, MAIZE, CROP)] = MAIZE_OUTPUT[area]
    rates.update(beta or {})
    rows, cols, values = zip(*((sector(area, item), process, value)
                               for (area, item, process), value in rates.items()))
    beta_matrix = sparse.csr_matrix((values, (rows, cols)), shape=(n_sectors, n_processes))
    beta_matrix.eliminate_zeros()

    areas = np.arange(n_areas)
    alpha_matrix = sparse.csr_matrix(
        (np.full(n_areas, FEED_RATE), (areas * n_items + BEEF, np.full(n_areas, FEEDLOT))),
        shape=(n_sectors, n_processes))
    nu_matrix = sparse.csr_matrix(
        (np.full(n_areas, FEED_SHARE), (areas * n_items + MAIZE, np.full(n_areas, FEEDLOT))),
        shape=(n_sectors, n_processes))

    entries = []
    for item, exporters in (uniform_trade(n_areas) if trade is None else trade).items():
        for exporter, importers in exporters.items():
            for importer, share in importers.items():
                entries.append((item, importer, exporter, share))
    item, importer, exporter, share = (np.array(column) for column in zip(*entries))
    trade_matrix = SparseItemMatrix.from_entries(item, importer, exporter, share, n_areas, n_items)

    exp = np.array([ETA_EXP[index % n_items] for index in range(n_sectors)])
    prod = np.array([ETA_PROD[index % n_items] for index in range(n_sectors)])
    for (area, item_index), value in (eta_exp or {}).items():
        exp[sector(area, item_index)] = value
    for (area, item_index), value in (eta_prod or {}).items():
        prod[sector(area, item_index)] = value

    amounts = np.zeros(n_sectors)
    for area in range(n_areas):
        amounts[sector(area, WHEAT)] = WHEAT_OUTPUT[area]
        amounts[sector(area, MAIZE)] = MAIZE_OUTPUT[area]
        amounts[sector(area, BEEF)] = BEEF_STOCK
    for (area, item_index), value in (x0 or {}).items():
        amounts[sector(area, item_index)] = value

    return ParameterSet(
        year=year,
        n_areas=n_areas,
        n_items=n_items,
        n_processes=n_processes,
        alpha=alpha_matrix,
        beta=beta_matrix,
        nu=nu_matrix,
        trade=trade_matrix,
        eta_exp=exp,
        eta_prod=prod,
        x0=amounts,
    )


def stepped_wheat(year: int) -> float:
    """
    Availability of wheat in area A: two halvings, in 1997 and in 2007.
    """
    if year < 1997:
        return 16000.0
    if year < 2007:
        return 8000.0
    return 4000.0


def stepped_series(first: int = 1992, last: int = 2012, catalog: Optional[Catalog] = None) -> list[ParameterSet]:
    return [make_params(year, catalog, x0={(A, WHEAT): stepped_wheat(year)}) for year in range(first, last + 1)]


def write_world(path: str, yearly: list[ParameterSet], catalog: Optional[Catalog] = None) -> str:
    """
    Writes a catalog and yearly parameters in the data directory layout.
    :return: the data directory
    """
    catalog = catalog or make_catalog()
    write_catalog(catalog, os.path.join(path, "catalog"))
    for params in yearly:
        write_parameter_set(params, os.path.join(path, "years"), catalog)
    return path


def random_catalog(rng: np.random.Generator, n_areas: Optional[int] = None, n_items: Optional[int] = None,
                   n_processes: Optional[int] = None) -> Catalog:
    """
    Catalog of up to six areas, five items in two commodity groups and three processes.
    """
    n_areas = n_areas or int(rng.integers(2, 7))
    n_items = n_items or int(rng.integers(1, 6))
    n_processes = n_processes or int(rng.integers(1, 4))
    areas = [f"A{index}" for index in range(n_areas)]
    items = [f"i{index}" for index in range(n_items)]
    return Catalog(
        Registry("area", areas, [f"Area {index}" for index in range(n_areas)]),
        Registry("item", items, [f"Item {index}" for index in range(n_items)]),
        Registry("process", [f"p{index}" for index in range(n_processes)],
                 [f"Process {index}" for index in range(n_processes)]),
        {code: f"g{index % 2}" for index, code in enumerate(items)},
        {code: float(rng.uniform(1e5, 1e7)) for code in areas},
    )


def random_params(rng: np.random.Generator, catalog: Catalog, year: int = 2000) -> ParameterSet:
    """
    Valid random parameters with amounts of order one. Every sector is either primary (one inputless output rate),
    secondary (one input-driven rate) or idle; at least two sectors are primary.
    """
    n_areas, n_items, n_processes = catalog.n_areas, catalog.n_items, catalog.n_processes
    n_sectors = n_areas * n_items
    sectors = np.arange(n_sectors)
    shape = (n_sectors, n_processes)

    primary = rng.random(n_sectors) < 0.5
    primary[rng.choice(n_sectors, size=min(2, n_sectors), replace=False)] = True
    secondary = ~primary & (rng.random(n_sectors) < 0.7)
    processes = rng.integers(0, n_processes, n_sectors)
    beta = sparse.csr_matrix((rng.uniform(0.1, 1.0, n_sectors)[primary], (sectors[primary], processes[primary])),
                             shape=shape)
    alpha = sparse.csr_matrix(
        (rng.uniform(0.01, 0.2, n_sectors)[secondary], (sectors[secondary], processes[secondary])), shape=shape)

    inputs = rng.random(n_sectors) < 0.5
    shares = rng.dirichlet(np.ones(n_processes), n_sectors) * rng.uniform(0.2, 1.0, (n_sectors, 1))
    nu = sparse.csr_matrix(np.where(inputs[:, None], shares, 0.0))

    entries = []
    for item in range(n_items):
        for exporter in range(n_areas):
            if rng.random() < 0.3:
                continue
            others = [area for area in range(n_areas) if area != exporter]
            importers = rng.choice(others, size=int(rng.integers(1, len(others) + 1)), replace=False)
            for importer, share in zip(importers, rng.dirichlet(np.ones(len(importers)))):
                entries.append((item, int(importer), exporter, share))
    item, importer, exporter, share = (np.array(column) for column in zip(*entries)) if entries else ([], [], [], [])
    trade = SparseItemMatrix.from_entries(item, importer, exporter, share, n_areas, n_items)

    allocation = rng.dirichlet(np.ones(3), n_sectors)
    eta_exp = np.where(rng.random(n_sectors) < 0.2, 0.0, allocation[:, 0])
    eta_prod = allocation[:, 1]

    return ParameterSet(
        year=year,
        n_areas=n_areas,
        n_items=n_items,
        n_processes=n_processes,
        alpha=alpha,
        beta=beta,
        nu=nu,
        trade=trade,
        eta_exp=eta_exp,
        eta_prod=eta_prod,
        x0=rng.uniform(0.0, 1.0, n_sectors),
    )
