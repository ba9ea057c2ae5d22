"""Straight-line scoring oracle, written before and independently of the
package's instruments module. Nothing here imports rehablink: every score is
spelled out item by item so the two routes cannot share a bug.
"""


def oracle_fss(items):
    assert len(items) == 9
    return (items[0] + items[1] + items[2] + items[3] + items[4]
            + items[5] + items[6] + items[7] + items[8]) / 9.0


def oracle_hads(items):
    assert len(items) == 14
    anxiety = items[0] + items[2] + items[4] + items[6] + items[8] + items[10] + items[12]
    depression = items[1] + items[3] + items[5] + items[7] + items[9] + items[11] + items[13]
    return {"HADS_A": anxiety, "HADS_D": depression}


def oracle_bdi2(items):
    assert len(items) == 21
    total = 0
    for it in items:
        total += it
    return total


def oracle_ess(items):
    assert len(items) == 8
    return items[0] + items[1] + items[2] + items[3] + items[4] + items[5] + items[6] + items[7]


def oracle_fsmc(items):
    assert len(items) == 20
    cog = (items[0] + items[2] + items[4] + items[6] + items[8]
           + items[10] + items[12] + items[14] + items[16] + items[18])
    motor = (items[1] + items[3] + items[5] + items[7] + items[9]
             + items[11] + items[13] + items[15] + items[17] + items[19])
    return {"FSMC_MOTOR": motor, "FSMC_COG": cog, "FSMC_TOTAL": motor + cog}


def oracle_sus(items):
    assert len(items) == 10
    odd = (items[0] - 1) + (items[2] - 1) + (items[4] - 1) + (items[6] - 1) + (items[8] - 1)
    even = (5 - items[1]) + (5 - items[3]) + (5 - items[5]) + (5 - items[7]) + (5 - items[9])
    return (odd + even) * 2.5


def oracle_arat(items):
    assert len(items) == 19
    grasp = items[0] + items[1] + items[2] + items[3] + items[4] + items[5]
    grip = items[6] + items[7] + items[8] + items[9]
    pinch = items[10] + items[11] + items[12] + items[13] + items[14] + items[15]
    gross = items[16] + items[17] + items[18]
    return {
        "ARAT_TOTAL": grasp + grip + pinch + gross,
        "ARAT_GRASP": grasp,
        "ARAT_GRIP": grip,
        "ARAT_PINCH": pinch,
        "ARAT_GROSS": gross,
    }


# (item count, item min, item max) per instrument, for random-vector tests.
ITEM_SPACES = {
    "FSS": (9, 1, 7),
    "HADS": (14, 0, 3),
    "BDI2": (21, 0, 3),
    "ESS": (8, 0, 3),
    "FSMC": (20, 1, 5),
    "SUS": (10, 1, 5),
    "ARAT": (19, 0, 3),
}


def oracle_scores(instrument, items):
    """All metric values the oracle expects for one item vector."""
    if instrument == "FSS":
        return {"FSS": oracle_fss(items)}
    if instrument == "HADS":
        return {k: float(v) for k, v in oracle_hads(items).items()}
    if instrument == "BDI2":
        return {"BDI2": float(oracle_bdi2(items))}
    if instrument == "ESS":
        return {"ESS": float(oracle_ess(items))}
    if instrument == "FSMC":
        return {k: float(v) for k, v in oracle_fsmc(items).items()}
    if instrument == "SUS":
        return {"SUS": oracle_sus(items)}
    if instrument == "ARAT":
        return {k: float(v) for k, v in oracle_arat(items).items()}
    raise AssertionError(instrument)
