"""Confusion matrix, accuracy, median, and the literature comparison table."""

import io
from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = ("elliptical", "spiral", "irregular")

# Published accuracies of earlier galaxy classifiers.  Echoed for context
# only; none of these methods is implemented here.
LITERATURE_BASELINES = (
    ("feed-forward NN + locally weighted regression", 2004, "91%"),
    ("naive Bayes / C4.5 / random forest", 2007, "91.64%"),
    ("non-negative matrix factorization", 2016, "93%"),
    ("projected-gradient NMF", 2017, "92%"),
    ("8-layer CNN, EFIGI images (published)", 2017, "97.272%"),
)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def correct(self):
        return int(np.trace(self.counts))


@dataclass
class EvalReport:
    confusion: ConfusionMatrix

    @property
    def n_samples(self):
        return self.confusion.total

    @property
    def accuracy(self):
        total = self.confusion.total
        return self.confusion.correct / total if total else 0.0

    @property
    def per_class_recall(self):
        counts = self.confusion.counts
        out = []
        for i in range(counts.shape[0]):
            row = int(counts[i].sum())
            out.append(int(counts[i, i]) / row if row else 0.0)
        return out

    def to_csv(self):
        return report_to_csv(self)


def confusion(preds, labels, num_classes=3):
    preds = [int(p) for p in preds]
    labels = [int(t) for t in labels]
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if not preds:
        raise ValueError("cannot build a confusion matrix from zero samples")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(preds, labels):
        if not (0 <= p < num_classes and 0 <= t < num_classes):
            raise ValueError(f"class index out of range: true={t}, pred={p}")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def evaluate_predictions(preds, labels):
    return EvalReport(confusion(preds, labels))


def median(values):
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("median of an empty list")
    mid = len(vals) // 2
    if len(vals) % 2:
        return vals[mid]
    return (vals[mid - 1] + vals[mid]) / 2.0


def format_percent(fraction, digits=2):
    return f"{100.0 * fraction:.{digits}f}%"


def render_comparison(report, data_kind="synthetic"):
    """Fixed-width comparison of literature accuracies and this run."""
    rows = [(name, str(year), acc, "literature") for name, year, acc in LITERATURE_BASELINES]
    rows.append((f"this run ({data_kind}, n={report.n_samples})", "-",
                 format_percent(report.accuracy), "measured"))
    headers = ("Method", "Year", "Accuracy", "Source")
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]

    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(headers), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    out.append("")
    out.append(f"this run: {format_percent(report.accuracy)}")
    return "\n".join(out) + "\n"


def render_report(report):
    names = CLASS_NAMES
    width = max(len(n) for n in names)
    out = [f"samples: {report.n_samples}",
           f"accuracy: {format_percent(report.accuracy, 3)}",
           "confusion (rows = true, columns = predicted):",
           " " * (width + 2) + "  ".join(n.rjust(width) for n in names)]
    for i, n in enumerate(names):
        out.append(n.ljust(width + 2) + "  ".join(str(v).rjust(width) for v in report.confusion.counts[i]))
    for n, r in zip(names, report.per_class_recall):
        out.append(f"recall {n}: {format_percent(r, 3)}")
    return "\n".join(out) + "\n"


# CSV layout:
#   true\pred,elliptical,spiral,irregular     (confusion block, 3 rows)
#   <blank line>
#   metric,value                              (summary block)
#   n_samples / accuracy / recall_<class>

def report_to_csv(report):
    buf = io.StringIO()
    buf.write("true\\pred," + ",".join(CLASS_NAMES) + "\n")
    for name, row in zip(CLASS_NAMES, report.confusion.counts):
        buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
    buf.write("\nmetric,value\n")
    buf.write(f"n_samples,{report.n_samples}\n")
    buf.write(f"accuracy,{report.accuracy!r}\n")
    for name, r in zip(CLASS_NAMES, report.per_class_recall):
        buf.write(f"recall_{name},{r!r}\n")
    return buf.getvalue()


def report_from_csv(text):
    lines = text.split("\n")
    if not lines or lines[0] != "true\\pred," + ",".join(CLASS_NAMES):
        raise ValueError("not an evaluation report CSV")
    counts = np.array([[int(v) for v in lines[1 + i].split(",")[1:]] for i in range(3)], dtype=np.int64)
    return EvalReport(ConfusionMatrix(counts))
