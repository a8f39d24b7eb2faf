"""CSV writers for round records, run summaries and verification tables."""
import csv
import io
import math
from typing import Iterable, List, Sequence

from co3.distfit import Family

RECORD_COLUMNS = ["t", "loss", "gap", "bits_payload", "bits_header", "mem_l1", "grad_l1",
                  "beta_hat", "alpha_hat", "w2_gennorm", "w2_norm", "w2_laplace", "w2_dweibull"]
SUMMARY_COLUMNS = ["scheme", "rounds", "users", "dimension", "bits_payload", "bits_header", "bits_total",
                   "final_loss", "final_gap"]


def fmt_num(x) -> str:
    """17 significant digits, enough for an exact float64 round trip."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def record_row(rec) -> List[str]:
    # bits are summed over users, L1 norms averaged over users;
    # fitted parameters are user 0 / layer 0
    fit = rec.fitted[0][0] if rec.fitted and rec.fitted[0] else None
    diag = rec.diagnostics
    w2 = [diag.w2(f) if diag is not None else math.nan
          for f in (Family.GENNORM, Family.NORMAL, Family.LAPLACE, Family.DOUBLE_WEIBULL)]
    n_users = len(rec.memory_l1)
    return [
        fmt_num(rec.t),
        fmt_num(rec.loss),
        fmt_num(rec.gap),
        fmt_num(int(sum(rec.bits_payload))),
        fmt_num(int(sum(rec.bits_header))),
        fmt_num(sum(rec.memory_l1) / n_users),
        fmt_num(sum(rec.gradient_l1) / n_users),
        fmt_num(fit.beta if fit is not None else math.nan),
        fmt_num(fit.alpha if fit is not None else math.nan),
        *[fmt_num(v) for v in w2],
    ]


def _write(rows: Iterable[Sequence[str]], header: Sequence[str], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def records_csv(records, path=None) -> str:
    return _write((record_row(r) for r in records), RECORD_COLUMNS, path)


def summary_csv(results, dimension: int, path=None) -> str:
    """One line per scheme: total bits against final loss and gap."""
    rows = []
    for res in results:
        cfg = res.config
        rows.append([cfg.label, fmt_num(cfg.T), fmt_num(cfg.U), fmt_num(dimension),
                     fmt_num(res.ledger.payload_bits), fmt_num(res.ledger.header_bits),
                     fmt_num(res.ledger.total_bits), fmt_num(res.final_loss), fmt_num(res.final_gap)])
    return _write(rows, SUMMARY_COLUMNS, path)


def table_csv(header, rows, path=None) -> str:
    return _write(([fmt_num(v) if not isinstance(v, str) else v for v in row] for row in rows), header, path)


def read_csv(path) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
