#include "refocs/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace refocs {
namespace ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

std::atomic<long> g_next_id{0};

void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->id = g_next_id.fetch_add(1);
    bool rg = false;
    for (const auto& p : parents) rg = rg || (p && p->requires_grad);
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

double stable_softplus(double a) {
    return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

double stable_sigmoid(double a) {
    if (a >= 0.0) {
        const double e = std::exp(-a);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(a);
    return e / (1.0 + e);
}

// col layout: [c*kh*kw, oh*ow], row (ci*kh+ki)*kw+kj, col oi*ow+oj.
void im2col(const double* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, double* col) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* dst = col + (static_cast<std::size_t>((ci * kh + ki) * kw + kj)) *
                                        (static_cast<std::size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        dst[oi * ow + oj] = (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                                ? x[(static_cast<std::size_t>(ci) * h + ii) * w + jj]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, double* x) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* src = col + (static_cast<std::size_t>((ci * kh + ki) * kw + kj)) *
                                              (static_cast<std::size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        x[(static_cast<std::size_t>(ci) * h + ii) * w + jj] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    n->id = g_next_id.fetch_add(1);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

bool any_requires_grad(const std::vector<Var>& vars) {
    for (const auto& v : vars) {
        if (v && v->requires_grad) return true;
    }
    return false;
}

void backward(const Var& root) {
    check(root != nullptr, "backward: null root");
    check(root->val.size() == 1, "backward: root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    // Reverse creation order is a topological order: parents precede children.
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (Node* n : order) {
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "add: shape mismatch");
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        for (int k = 0; k < 2; ++k) {
            auto& p = nd.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "sub: shape mismatch");
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] - b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) b->grad[i] -= nd.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "mul: shape mismatch");
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i] * b->val[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) b->grad[i] += nd.grad[i] * a->val[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * s;
    return make_node(std::move(out), {a}, [s](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + s;
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] > 0.0 ? a->val[i] : 0.0;
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            if (a->val[i] > 0.0) a->grad[i] += nd.grad[i];
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a->val[i]);
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            const double s = nd.val[i];
            a->grad[i] += nd.grad[i] * s * (1.0 - s);
        }
    });
}

Var exp_op(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->val[i]);
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i] * nd.val[i];
    });
}

Var log_op(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a->val[i]);
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i] / a->val[i];
    });
}

Var softplus(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_softplus(a->val[i]);
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            a->grad[i] += nd.grad[i] * stable_sigmoid(a->val[i]);
        }
    });
}

Var square(const Var& a) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * a->val[i];
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            a->grad[i] += 2.0 * nd.grad[i] * a->val[i];
        }
    });
}

Var mul_scalarvar(const Var& a, const Var& s) {
    check(s->val.size() == 1, "mul_scalarvar: scale must be scalar");
    const double sv = s->val[0];
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * sv;
    return make_node(std::move(out), {a, s}, [](Node& nd) {
        auto& a = nd.parents[0];
        auto& s = nd.parents[1];
        const double sv = s->val[0];
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i] * sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < nd.grad.size(); ++i) acc += nd.grad[i] * a->val[i];
            s->grad[0] += acc;
        }
    });
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a->val.size(); ++i) acc += a->val[i];
    return make_node(Tensor::scalar(acc), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = nd.grad[0];
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

Var mean_all(const Var& a) {
    check(a->val.size() > 0, "mean_all: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < a->val.size(); ++i) acc += a->val[i];
    const double n = static_cast<double>(a->val.size());
    return make_node(Tensor::scalar(acc / n), {a}, [n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = nd.grad[0] / n;
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->val.reshaped(std::move(shape));
    return make_node(std::move(out), {a}, [](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[i] += nd.grad[i];
    });
}

Var slice_rows(const Var& a, int row0, int nrows) {
    check(a->val.ndim() >= 1, "slice_rows: needs at least 1 dim");
    const int total = a->val.dim(0);
    check(row0 >= 0 && nrows >= 0 && row0 + nrows <= total, "slice_rows: range out of bounds");
    const int rowlen = a->val.cols();
    std::vector<int> shape = a->val.shape();
    shape[0] = nrows;
    Tensor out(shape);
    const std::size_t off = static_cast<std::size_t>(row0) * rowlen;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[off + i];
    return make_node(std::move(out), {a}, [off](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) a->grad[off + i] += nd.grad[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: no parts");
    std::vector<int> shape = parts[0]->val.shape();
    const int rowlen = parts[0]->val.cols();
    int total = 0;
    for (const auto& p : parts) {
        check(p->val.ndim() == static_cast<int>(shape.size()), "concat_rows: rank mismatch");
        check(p->val.cols() == rowlen, "concat_rows: trailing dims mismatch");
        total += p->val.dim(0);
    }
    shape[0] = total;
    Tensor out(shape);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p->val.size(); ++i) out[off + i] = p->val[i];
        off += p->val.size();
    }
    return make_node(std::move(out), parts, [](Node& nd) {
        std::size_t off = 0;
        for (auto& p : nd.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += nd.grad[off + i];
            }
            off += p->val.size();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: no parts");
    const int m = parts[0]->val.dim(0);
    int total = 0;
    for (const auto& p : parts) {
        check(p->val.ndim() == 2, "concat_cols: parts must be 2-D");
        check(p->val.dim(0) == m, "concat_cols: row count mismatch");
        total += p->val.dim(1);
    }
    Tensor out({m, total});
    int coff = 0;
    for (const auto& p : parts) {
        const int pc = p->val.dim(1);
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < pc; ++c) out.at(r, coff + c) = p->val.at(r, c);
        }
        coff += pc;
    }
    return make_node(std::move(out), parts, [m, total](Node& nd) {
        int coff = 0;
        for (auto& p : nd.parents) {
            const int pc = p->val.dim(1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (int r = 0; r < m; ++r) {
                    for (int c = 0; c < pc; ++c) {
                        p->grad.at(r, c) += nd.grad[static_cast<std::size_t>(r) * total + coff + c];
                    }
                }
            }
            coff += pc;
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "matmul: operands must be 2-D");
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
    check(b->val.dim(0) == k, "matmul: inner dims mismatch");
    Tensor out({m, n});
    MapM(out.data(), m, n).noalias() =
        CMapM(a->val.data(), m, k) * CMapM(b->val.data(), k, n);
    return make_node(std::move(out), {a, b}, [m, k, n](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        CMapM G(nd.grad.data(), m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            MapM(a->grad.data(), m, k).noalias() += G * CMapM(b->val.data(), k, n).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            MapM(b->grad.data(), k, n).noalias() += CMapM(a->val.data(), m, k).transpose() * G;
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    check(x->val.ndim() == 2 && w->val.ndim() == 2, "linear: x and w must be 2-D");
    const int m = x->val.dim(0), k = x->val.dim(1), n = w->val.dim(0);
    check(w->val.dim(1) == k, "linear: weight inner dim mismatch");
    check(static_cast<int>(b->val.size()) == n, "linear: bias size mismatch");
    Tensor out({m, n});
    MapM O(out.data(), m, n);
    O.noalias() = CMapM(x->val.data(), m, k) * CMapM(w->val.data(), n, k).transpose();
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) out.at(r, c) += b->val[static_cast<std::size_t>(c)];
    }
    return make_node(std::move(out), {x, w, b}, [m, k, n](Node& nd) {
        auto& x = nd.parents[0];
        auto& w = nd.parents[1];
        auto& b = nd.parents[2];
        CMapM G(nd.grad.data(), m, n);
        if (x->requires_grad) {
            x->ensure_grad();
            MapM(x->grad.data(), m, k).noalias() += G * CMapM(w->val.data(), n, k);
        }
        if (w->requires_grad) {
            w->ensure_grad();
            MapM(w->grad.data(), n, k).noalias() +=
                G.transpose() * CMapM(x->val.data(), m, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int c = 0; c < n; ++c) {
                double acc = 0.0;
                for (int r = 0; r < m; ++r) acc += G(r, c);
                b->grad[static_cast<std::size_t>(c)] += acc;
            }
        }
    });
}

Var softmax_rows(const Var& a) {
    check(a->val.ndim() == 2, "softmax_rows: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({m, n});
    for (int r = 0; r < m; ++r) {
        double mx = a->val.at(r, 0);
        for (int c = 1; c < n; ++c) mx = std::max(mx, a->val.at(r, c));
        double z = 0.0;
        for (int c = 0; c < n; ++c) {
            const double e = std::exp(a->val.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < n; ++c) out.at(r, c) /= z;
    }
    return make_node(std::move(out), {a}, [m, n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            double dot = 0.0;
            for (int c = 0; c < n; ++c) dot += nd.grad.at(r, c) * nd.val.at(r, c);
            for (int c = 0; c < n; ++c) {
                a->grad.at(r, c) += nd.val.at(r, c) * (nd.grad.at(r, c) - dot);
            }
        }
    });
}

Var log_softmax_rows(const Var& a) {
    check(a->val.ndim() == 2, "log_softmax_rows: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({m, n});
    for (int r = 0; r < m; ++r) {
        double mx = a->val.at(r, 0);
        for (int c = 1; c < n; ++c) mx = std::max(mx, a->val.at(r, c));
        double z = 0.0;
        for (int c = 0; c < n; ++c) z += std::exp(a->val.at(r, c) - mx);
        const double lse = mx + std::log(z);
        for (int c = 0; c < n; ++c) out.at(r, c) = a->val.at(r, c) - lse;
    }
    return make_node(std::move(out), {a}, [m, n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            double gsum = 0.0;
            for (int c = 0; c < n; ++c) gsum += nd.grad.at(r, c);
            for (int c = 0; c < n; ++c) {
                a->grad.at(r, c) += nd.grad.at(r, c) - std::exp(nd.val.at(r, c)) * gsum;
            }
        }
    });
}

Var rowwise_sum(const Var& a) {
    check(a->val.ndim() == 2, "rowwise_sum: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({m, 1});
    for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int c = 0; c < n; ++c) acc += a->val.at(r, c);
        out[static_cast<std::size_t>(r)] = acc;
    }
    return make_node(std::move(out), {a}, [m, n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            const double g = nd.grad[static_cast<std::size_t>(r)];
            for (int c = 0; c < n; ++c) a->grad.at(r, c) += g;
        }
    });
}

Var rowwise_div(const Var& a, const Var& d) {
    check(a->val.ndim() == 2, "rowwise_div: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    check(static_cast<int>(d->val.size()) == m, "rowwise_div: divisor size mismatch");
    Tensor out({m, n});
    for (int r = 0; r < m; ++r) {
        const double dv = d->val[static_cast<std::size_t>(r)];
        for (int c = 0; c < n; ++c) out.at(r, c) = a->val.at(r, c) / dv;
    }
    return make_node(std::move(out), {a, d}, [m, n](Node& nd) {
        auto& a = nd.parents[0];
        auto& d = nd.parents[1];
        for (int r = 0; r < m; ++r) {
            const double dv = d->val[static_cast<std::size_t>(r)];
            if (a->requires_grad) {
                a->ensure_grad();
                for (int c = 0; c < n; ++c) a->grad.at(r, c) += nd.grad.at(r, c) / dv;
            }
            if (d->requires_grad) {
                d->ensure_grad();
                double acc = 0.0;
                for (int c = 0; c < n; ++c) acc += nd.grad.at(r, c) * a->val.at(r, c);
                d->grad[static_cast<std::size_t>(r)] -= acc / (dv * dv);
            }
        }
    });
}

Var gather_cols(const Var& a, const std::vector<int>& cols) {
    check(a->val.ndim() == 2, "gather_cols: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    check(static_cast<int>(cols.size()) == m, "gather_cols: index count mismatch");
    Tensor out({m});
    for (int r = 0; r < m; ++r) {
        check(cols[static_cast<std::size_t>(r)] >= 0 && cols[static_cast<std::size_t>(r)] < n,
              "gather_cols: index out of range");
        out[static_cast<std::size_t>(r)] = a->val.at(r, cols[static_cast<std::size_t>(r)]);
    }
    return make_node(std::move(out), {a}, [cols, m](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            a->grad.at(r, cols[static_cast<std::size_t>(r)]) += nd.grad[static_cast<std::size_t>(r)];
        }
    });
}

Var cosine_matrix(const Var& a, const Var& b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "cosine_matrix: needs 2-D");
    const int m = a->val.dim(0), d = a->val.dim(1), n = b->val.dim(0);
    check(b->val.dim(1) == d, "cosine_matrix: feature dims mismatch");
    constexpr double kEps = 1e-12;

    Tensor out({m, n});
    MapM(out.data(), m, n).noalias() =
        CMapM(a->val.data(), m, d) * CMapM(b->val.data(), n, d).transpose();
    std::vector<double> na(static_cast<std::size_t>(m)), nb(static_cast<std::size_t>(n));
    std::vector<char> clamp_a(static_cast<std::size_t>(m)), clamp_b(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += a->val.at(i, j) * a->val.at(i, j);
        const double norm = std::sqrt(s);
        clamp_a[static_cast<std::size_t>(i)] = norm < kEps;
        na[static_cast<std::size_t>(i)] = std::max(norm, kEps);
    }
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += b->val.at(i, j) * b->val.at(i, j);
        const double norm = std::sqrt(s);
        clamp_b[static_cast<std::size_t>(i)] = norm < kEps;
        nb[static_cast<std::size_t>(i)] = std::max(norm, kEps);
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out.at(i, j) /= na[static_cast<std::size_t>(i)] * nb[static_cast<std::size_t>(j)];
        }
    }
    return make_node(std::move(out), {a, b},
                     [m, n, d, na, nb, clamp_a, clamp_b](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        // gp[i,j] = grad[i,j] / (na_i * nb_j); the norm-direction terms use
        // s_i = sum_j grad[i,j] * cos[i,j]. A clamped norm contributes no
        // direction gradient (the true norm is ~0, treated as constant).
        Tensor gp({m, n});
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                gp.at(i, j) = nd.grad.at(i, j) /
                              (na[static_cast<std::size_t>(i)] * nb[static_cast<std::size_t>(j)]);
            }
        }
        if (a->requires_grad) {
            a->ensure_grad();
            MapM(a->grad.data(), m, d).noalias() +=
                CMapM(gp.data(), m, n) * CMapM(b->val.data(), n, d);
            for (int i = 0; i < m; ++i) {
                if (clamp_a[static_cast<std::size_t>(i)]) continue;
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += nd.grad.at(i, j) * nd.val.at(i, j);
                const double f = s / (na[static_cast<std::size_t>(i)] * na[static_cast<std::size_t>(i)]);
                for (int j = 0; j < d; ++j) a->grad.at(i, j) -= f * a->val.at(i, j);
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            MapM(b->grad.data(), n, d).noalias() +=
                CMapM(gp.data(), m, n).transpose() * CMapM(a->val.data(), m, d);
            for (int j = 0; j < n; ++j) {
                if (clamp_b[static_cast<std::size_t>(j)]) continue;
                double s = 0.0;
                for (int i = 0; i < m; ++i) s += nd.grad.at(i, j) * nd.val.at(i, j);
                const double f = s / (nb[static_cast<std::size_t>(j)] * nb[static_cast<std::size_t>(j)]);
                for (int i = 0; i < d; ++i) b->grad.at(j, i) -= f * b->val.at(j, i);
            }
        }
    });
}

Var pairwise_l1(const Var& a, const Var& b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "pairwise_l1: needs 2-D");
    const int m = a->val.dim(0), d = a->val.dim(1), n = b->val.dim(0);
    check(b->val.dim(1) == d, "pairwise_l1: feature dims mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += std::abs(a->val.at(i, k) - b->val.at(j, k));
            out.at(i, j) = acc;
        }
    }
    return make_node(std::move(out), {a, b}, [m, n, d](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                const double g = nd.grad.at(i, j);
                if (g == 0.0) continue;
                for (int k = 0; k < d; ++k) {
                    const double diff = a->val.at(i, k) - b->val.at(j, k);
                    const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    if (a->requires_grad) a->grad.at(i, k) += g * s;
                    if (b->requires_grad) b->grad.at(j, k) -= g * s;
                }
            }
        }
    });
}

Var pairwise_sqdist(const Var& a, const Var& b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "pairwise_sqdist: needs 2-D");
    const int m = a->val.dim(0), d = a->val.dim(1), n = b->val.dim(0);
    check(b->val.dim(1) == d, "pairwise_sqdist: feature dims mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = a->val.at(i, k) - b->val.at(j, k);
                acc += diff * diff;
            }
            out.at(i, j) = acc;
        }
    }
    return make_node(std::move(out), {a, b}, [m, n, d](Node& nd) {
        auto& a = nd.parents[0];
        auto& b = nd.parents[1];
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                const double g2 = 2.0 * nd.grad.at(i, j);
                if (g2 == 0.0) continue;
                for (int k = 0; k < d; ++k) {
                    const double diff = a->val.at(i, k) - b->val.at(j, k);
                    if (a->requires_grad) a->grad.at(i, k) += g2 * diff;
                    if (b->requires_grad) b->grad.at(j, k) -= g2 * diff;
                }
            }
        }
    });
}

Var rowwise_min(const Var& a, std::vector<int>* argmin) {
    check(a->val.ndim() == 2, "rowwise_min: needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    check(n > 0, "rowwise_min: empty rows");
    Tensor out({m, 1});
    std::vector<int> idx(static_cast<std::size_t>(m));
    for (int r = 0; r < m; ++r) {
        int best = 0;
        double bv = a->val.at(r, 0);
        for (int c = 1; c < n; ++c) {
            if (a->val.at(r, c) < bv) {
                bv = a->val.at(r, c);
                best = c;
            }
        }
        out[static_cast<std::size_t>(r)] = bv;
        idx[static_cast<std::size_t>(r)] = best;
    }
    if (argmin) *argmin = idx;
    return make_node(std::move(out), {a}, [idx, m](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            a->grad.at(r, idx[static_cast<std::size_t>(r)]) += nd.grad[static_cast<std::size_t>(r)];
        }
    });
}

Var kl_rows(const Var& mu, const Var& h) {
    check(mu->val.same_shape(h->val), "kl_rows: shape mismatch");
    check(mu->val.ndim() == 2, "kl_rows: needs 2-D");
    const int m = mu->val.dim(0), d = mu->val.dim(1);
    Tensor out({m, 1});
    for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) {
            const double muv = mu->val.at(r, c);
            const double hv = h->val.at(r, c);
            acc += muv * muv + std::exp(2.0 * hv) - 1.0 - 2.0 * hv;
        }
        out[static_cast<std::size_t>(r)] = 0.5 * acc;
    }
    return make_node(std::move(out), {mu, h}, [m, d](Node& nd) {
        auto& mu = nd.parents[0];
        auto& h = nd.parents[1];
        for (int r = 0; r < m; ++r) {
            const double g = nd.grad[static_cast<std::size_t>(r)];
            if (mu->requires_grad) {
                mu->ensure_grad();
                for (int c = 0; c < d; ++c) mu->grad.at(r, c) += g * mu->val.at(r, c);
            }
            if (h->requires_grad) {
                h->ensure_grad();
                for (int c = 0; c < d; ++c) {
                    h->grad.at(r, c) += g * (std::exp(2.0 * h->val.at(r, c)) - 1.0);
                }
            }
        }
    });
}

Var bce_sum_rows_logits(const Var& logits, const Tensor& targets) {
    check(logits->val.same_shape(targets), "bce_sum_rows_logits: shape mismatch");
    const int m = logits->val.dim(0);
    const int n = logits->val.cols();
    Tensor out({m, 1});
    for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int c = 0; c < n; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * n + c;
            acc += stable_softplus(logits->val[i]) - targets[i] * logits->val[i];
        }
        out[static_cast<std::size_t>(r)] = acc;
    }
    return make_node(std::move(out), {logits}, [targets, m, n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int r = 0; r < m; ++r) {
            const double g = nd.grad[static_cast<std::size_t>(r)];
            for (int c = 0; c < n; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * n + c;
                a->grad[i] += g * (stable_sigmoid(a->val[i]) - targets[i]);
            }
        }
    });
}

Var bce_mean_logits(const Var& logits, const Tensor& targets) {
    check(logits->val.same_shape(targets), "bce_mean_logits: shape mismatch");
    check(logits->val.size() > 0, "bce_mean_logits: empty tensor");
    const double n = static_cast<double>(logits->val.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < logits->val.size(); ++i) {
        acc += stable_softplus(logits->val[i]) - targets[i] * logits->val[i];
    }
    return make_node(Tensor::scalar(acc / n), {logits}, [targets, n](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = nd.grad[0] / n;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            a->grad[i] += g * (stable_sigmoid(a->val[i]) - targets[i]);
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(x->val.ndim() == 4 && w->val.ndim() == 4, "conv2d: x and w must be 4-D");
    const int n = x->val.dim(0), cin = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    const int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    check(w->val.dim(1) == cin, "conv2d: channel mismatch");
    check(static_cast<int>(b->val.size()) == cout, "conv2d: bias size mismatch");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    check(oh > 0 && ow > 0, "conv2d: output collapses to zero size");

    const int ckk = cin * kh * kw;
    const std::size_t sample_in = static_cast<std::size_t>(cin) * h * wd;
    const std::size_t sample_out = static_cast<std::size_t>(cout) * oh * ow;
    Tensor out({n, cout, oh, ow});
    std::vector<double> col(static_cast<std::size_t>(ckk) * oh * ow);
    CMapM Wmat(w->val.data(), cout, ckk);
    for (int s = 0; s < n; ++s) {
        im2col(x->val.data() + s * sample_in, cin, h, wd, kh, kw, stride, pad, oh, ow, col.data());
        MapM O(out.data() + s * sample_out, cout, oh * ow);
        O.noalias() = Wmat * CMapM(col.data(), ckk, oh * ow);
        for (int co = 0; co < cout; ++co) O.row(co).array() += b->val[static_cast<std::size_t>(co)];
    }
    return make_node(std::move(out), {x, w, b},
                     [n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, ckk, sample_in,
                      sample_out](Node& nd) {
        auto& x = nd.parents[0];
        auto& w = nd.parents[1];
        auto& b = nd.parents[2];
        if (x->requires_grad) x->ensure_grad();
        if (w->requires_grad) w->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        std::vector<double> col(static_cast<std::size_t>(ckk) * oh * ow);
        std::vector<double> colg(static_cast<std::size_t>(ckk) * oh * ow);
        CMapM Wmat(w->val.data(), cout, ckk);
        for (int s = 0; s < n; ++s) {
            CMapM Gy(nd.grad.data() + s * sample_out, cout, oh * ow);
            if (w->requires_grad) {
                im2col(x->val.data() + s * sample_in, cin, h, wd, kh, kw, stride, pad, oh, ow,
                       col.data());
                MapM(w->grad.data(), cout, ckk).noalias() +=
                    Gy * CMapM(col.data(), ckk, oh * ow).transpose();
            }
            if (b->requires_grad) {
                for (int co = 0; co < cout; ++co) {
                    b->grad[static_cast<std::size_t>(co)] += Gy.row(co).sum();
                }
            }
            if (x->requires_grad) {
                MapM(colg.data(), ckk, oh * ow).noalias() = Wmat.transpose() * Gy;
                col2im(colg.data(), cin, h, wd, kh, kw, stride, pad, oh, ow,
                       x->grad.data() + s * sample_in);
            }
        }
    });
}

Var conv2d_transpose(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int out_h, int out_w) {
    check(x->val.ndim() == 4 && w->val.ndim() == 4, "conv2d_transpose: x and w must be 4-D");
    const int n = x->val.dim(0), cin = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    const int cout = w->val.dim(1), kh = w->val.dim(2), kw = w->val.dim(3);
    check(w->val.dim(0) == cin, "conv2d_transpose: channel mismatch");
    check(static_cast<int>(b->val.size()) == cout, "conv2d_transpose: bias size mismatch");
    // The op is the exact adjoint of a conv running out -> in; the requested
    // output size must map back to the input size under that conv.
    check(out_h + 2 * pad - kh >= 0 && out_w + 2 * pad - kw >= 0,
          "conv2d_transpose: output smaller than kernel");
    check((out_h + 2 * pad - kh) / stride + 1 == h && (out_w + 2 * pad - kw) / stride + 1 == wd,
          "conv2d_transpose: output size inconsistent with input size");

    const int ckk = cout * kh * kw;
    const std::size_t sample_in = static_cast<std::size_t>(cin) * h * wd;
    const std::size_t sample_out = static_cast<std::size_t>(cout) * out_h * out_w;
    Tensor out({n, cout, out_h, out_w});
    std::vector<double> colg(static_cast<std::size_t>(ckk) * h * wd);
    CMapM Wmat(w->val.data(), cin, ckk);
    for (int s = 0; s < n; ++s) {
        CMapM Xmat(x->val.data() + s * sample_in, cin, h * wd);
        MapM(colg.data(), ckk, h * wd).noalias() = Wmat.transpose() * Xmat;
        double* dst = out.data() + s * sample_out;
        col2im(colg.data(), cout, out_h, out_w, kh, kw, stride, pad, h, wd, dst);
        for (int co = 0; co < cout; ++co) {
            const double bv = b->val[static_cast<std::size_t>(co)];
            double* ch = dst + static_cast<std::size_t>(co) * out_h * out_w;
            for (int i = 0; i < out_h * out_w; ++i) ch[i] += bv;
        }
    }
    return make_node(std::move(out), {x, w, b},
                     [n, cin, h, wd, cout, kh, kw, stride, pad, out_h, out_w, ckk, sample_in,
                      sample_out](Node& nd) {
        auto& x = nd.parents[0];
        auto& w = nd.parents[1];
        auto& b = nd.parents[2];
        if (x->requires_grad) x->ensure_grad();
        if (w->requires_grad) w->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        std::vector<double> col(static_cast<std::size_t>(ckk) * h * wd);
        CMapM Wmat(w->val.data(), cin, ckk);
        for (int s = 0; s < n; ++s) {
            const double* gy = nd.grad.data() + s * sample_out;
            im2col(gy, cout, out_h, out_w, kh, kw, stride, pad, h, wd, col.data());
            CMapM Col(col.data(), ckk, h * wd);
            if (x->requires_grad) {
                MapM(x->grad.data() + s * sample_in, cin, h * wd).noalias() += Wmat * Col;
            }
            if (w->requires_grad) {
                MapM(w->grad.data(), cin, ckk).noalias() +=
                    CMapM(x->val.data() + s * sample_in, cin, h * wd) * Col.transpose();
            }
            if (b->requires_grad) {
                for (int co = 0; co < cout; ++co) {
                    const double* ch = gy + static_cast<std::size_t>(co) * out_h * out_w;
                    double acc = 0.0;
                    for (int i = 0; i < out_h * out_w; ++i) acc += ch[i];
                    b->grad[static_cast<std::size_t>(co)] += acc;
                }
            }
        }
    });
}

Var maxpool2d(const Var& x) {
    check(x->val.ndim() == 4, "maxpool2d: needs 4-D");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    check(h >= 2 && w >= 2, "maxpool2d: spatial size below window");
    const int oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
    std::vector<std::size_t> arg(out.size());
    std::size_t oi = 0;
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double* plane =
                x->val.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
            const std::size_t plane_off = (static_cast<std::size_t>(s) * c + ch) *
                                          static_cast<std::size_t>(h) * w;
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    // first max wins ties
                    std::size_t best = static_cast<std::size_t>(2 * i) * w + 2 * j;
                    double bv = plane[best];
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const std::size_t idx =
                                static_cast<std::size_t>(2 * i + di) * w + (2 * j + dj);
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    }
                    out[oi] = bv;
                    arg[oi] = plane_off + best;
                    ++oi;
                }
            }
        }
    }
    return make_node(std::move(out), {x}, [arg = std::move(arg)](Node& nd) {
        auto& x = nd.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) x->grad[arg[i]] += nd.grad[i];
    });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check(x->val.ndim() == 4, "instance_norm: needs 4-D");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    check(static_cast<int>(gamma->val.size()) == c && static_cast<int>(beta->val.size()) == c,
          "instance_norm: affine size mismatch");
    const int hw = h * w;
    check(hw > 0, "instance_norm: empty plane");
    Tensor out({n, c, h, w});
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t off = (static_cast<std::size_t>(s) * c + ch) *
                                    static_cast<std::size_t>(hw);
            double m = 0.0;
            for (int i = 0; i < hw; ++i) m += x->val[off + i];
            m /= hw;
            double v = 0.0;
            for (int i = 0; i < hw; ++i) {
                const double d = x->val[off + i] - m;
                v += d * d;
            }
            v /= hw;
            const double inv = 1.0 / std::sqrt(v + eps);
            const double g = gamma->val[static_cast<std::size_t>(ch)];
            const double bt = beta->val[static_cast<std::size_t>(ch)];
            for (int i = 0; i < hw; ++i) {
                out[off + i] = g * (x->val[off + i] - m) * inv + bt;
            }
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [n, c, hw, eps](Node& nd) {
        auto& x = nd.parents[0];
        auto& gamma = nd.parents[1];
        auto& beta = nd.parents[2];
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        std::vector<double> xhat(static_cast<std::size_t>(hw));
        for (int s = 0; s < n; ++s) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t off = (static_cast<std::size_t>(s) * c + ch) *
                                        static_cast<std::size_t>(hw);
                double m = 0.0;
                for (int i = 0; i < hw; ++i) m += x->val[off + i];
                m /= hw;
                double v = 0.0;
                for (int i = 0; i < hw; ++i) {
                    const double d = x->val[off + i] - m;
                    v += d * d;
                }
                v /= hw;
                const double inv = 1.0 / std::sqrt(v + eps);
                for (int i = 0; i < hw; ++i) xhat[static_cast<std::size_t>(i)] = (x->val[off + i] - m) * inv;

                const double g = gamma->val[static_cast<std::size_t>(ch)];
                if (gamma->requires_grad || beta->requires_grad) {
                    double dg = 0.0, db = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        dg += nd.grad[off + i] * xhat[static_cast<std::size_t>(i)];
                        db += nd.grad[off + i];
                    }
                    if (gamma->requires_grad) gamma->grad[static_cast<std::size_t>(ch)] += dg;
                    if (beta->requires_grad) beta->grad[static_cast<std::size_t>(ch)] += db;
                }
                if (x->requires_grad) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        const double dxh = nd.grad[off + i] * g;
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[static_cast<std::size_t>(i)];
                    }
                    mean_dxhat /= hw;
                    mean_dxhat_xhat /= hw;
                    for (int i = 0; i < hw; ++i) {
                        const double dxh = nd.grad[off + i] * g;
                        x->grad[off + i] +=
                            inv * (dxh - mean_dxhat - xhat[static_cast<std::size_t>(i)] * mean_dxhat_xhat);
                    }
                }
            }
        }
    });
}

Var clamp_min(const Var& a, double lo) {
    Tensor out(a->val.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a->val[i], lo);
    return make_node(std::move(out), {a}, [lo](Node& nd) {
        auto& a = nd.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            if (a->val[i] > lo) a->grad[i] += nd.grad[i];
        }
    });
}

}  // namespace ad
}  // namespace refocs
