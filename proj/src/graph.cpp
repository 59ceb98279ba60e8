#include "race/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace race {

namespace {

template <class S>
void require(bool ok, const char* op, const Array<S>& a) {
    if (!ok) throw ShapeError(std::string(op) + ": bad shape " + a.shape_str());
}

template <class S>
void require2(bool ok, const char* op, const Array<S>& a, const Array<S>& b) {
    if (!ok) throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str());
}

// c[m,n] += a[m,k] * b[k,n]
template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            if (av == S(0)) continue;
            const S* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<size_t>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        const S* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            if (av == S(0)) continue;
            S* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
int clip_offset(int j, int i, int w) {
    int off = j - i;
    if (off < -w) off = -w;
    if (off > w) off = w;
    return off + w;
}

}  // namespace

template <class S>
typename Graph<S>::Ref Graph<S>::push(Array<S> val, bool req, std::function<void(Graph&)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = req;
    if (req) n.grad = Array<S>::zeros(n.val.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
}

template <class S>
typename Graph<S>::Ref Graph<S>::param(Tensor<S>& p) {
    Ref r = push(p.value, p.requires_grad, nullptr);
    nodes_[r].bound = &p;
    if (p.requires_grad) {
        nodes_[r].back = [r](Graph& g) {
            Node& n = g.nodes_[r];
            for (size_t i = 0; i < n.grad.data.size(); ++i) n.bound->grad.data[i] += n.grad.data[i];
        };
    }
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::input(Array<S> v) {
    return push(std::move(v), false, nullptr);
}

template <class S>
typename Graph<S>::Ref Graph<S>::matmul(Ref a, Ref b) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& B = nodes_[b].val;
    require2<S>(A.shape.size() == 2 && B.shape.size() == 2 && A.shape[1] == B.shape[0], "matmul", A, B);
    const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Array<S> out = Array<S>::zeros({m, n});
    gemm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, b, r, m, k, n](Graph& g) {
            const S* dc = g.nodes_[r].grad.data.data();
            if (g.nodes_[a].requires_grad)
                gemm_nt(dc, g.nodes_[b].val.data.data(), g.grad_buf(a).data.data(), m, n, k);
            if (g.nodes_[b].requires_grad)
                gemm_tn(g.nodes_[a].val.data.data(), dc, g.grad_buf(b).data.data(), m, k, n);
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::transpose(Ref a) {
    const Array<S>& A = nodes_[a].val;
    require<S>(A.shape.size() == 2, "transpose", A);
    const int m = A.shape[0], n = A.shape[1];
    Array<S> out = Array<S>::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(j) * m + i] = A.data[static_cast<size_t>(i) * n + j];
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, m, n](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) da.data[static_cast<size_t>(i) * n + j] += d.data[static_cast<size_t>(j) * m + i];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::add(Ref a, Ref b) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& B = nodes_[b].val;
    require2<S>(A.same_shape(B), "add", A, B);
    Array<S> out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, b, r](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            if (g.nodes_[a].requires_grad) {
                Array<S>& da = g.grad_buf(a);
                for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i];
            }
            if (g.nodes_[b].requires_grad) {
                Array<S>& db = g.grad_buf(b);
                for (size_t i = 0; i < d.data.size(); ++i) db.data[i] += d.data[i];
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::add_rowvec(Ref a, Ref bias) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& B = nodes_[bias].val;
    require2<S>(A.shape.size() == 2 && static_cast<size_t>(A.shape[1]) == B.data.size(), "add_rowvec", A, B);
    const int m = A.shape[0], n = A.shape[1];
    Array<S> out = A;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] += B.data[j];
    bool req = nodes_[a].requires_grad || nodes_[bias].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, bias, r, m, n](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            if (g.nodes_[a].requires_grad) {
                Array<S>& da = g.grad_buf(a);
                for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i];
            }
            if (g.nodes_[bias].requires_grad) {
                Array<S>& db = g.grad_buf(bias);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db.data[j] += d.data[static_cast<size_t>(i) * n + j];
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::mul(Ref a, Ref b) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& B = nodes_[b].val;
    require2<S>(A.same_shape(B), "mul", A, B);
    Array<S> out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, b, r](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            if (g.nodes_[a].requires_grad) {
                Array<S>& da = g.grad_buf(a);
                const Array<S>& bv = g.nodes_[b].val;
                for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i] * bv.data[i];
            }
            if (g.nodes_[b].requires_grad) {
                Array<S>& db = g.grad_buf(b);
                const Array<S>& av = g.nodes_[a].val;
                for (size_t i = 0; i < d.data.size(); ++i) db.data[i] += d.data[i] * av.data[i];
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::scale(Ref a, S c) {
    Array<S> out = nodes_[a].val;
    for (S& v : out.data) v *= c;
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, c](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i] * c;
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::offset(Ref a, S c) {
    Array<S> out = nodes_[a].val;
    for (S& v : out.data) v += c;
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::mul_scalar(Ref a, Ref s) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& Sv = nodes_[s].val;
    require2<S>(Sv.size() == 1, "mul_scalar", A, Sv);
    const S sv = Sv.data[0];
    Array<S> out = A;
    for (S& v : out.data) v *= sv;
    bool req = nodes_[a].requires_grad || nodes_[s].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, s, r, sv](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            if (g.nodes_[a].requires_grad) {
                Array<S>& da = g.grad_buf(a);
                for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i] * sv;
            }
            if (g.nodes_[s].requires_grad) {
                const Array<S>& av = g.nodes_[a].val;
                S acc = S(0);
                for (size_t i = 0; i < d.data.size(); ++i) acc += d.data[i] * av.data[i];
                g.grad_buf(s).data[0] += acc;
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::concat(const std::vector<Ref>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    bool req = false;
    int rows0 = nodes_[parts[0]].val.shape.size() == 2 ? nodes_[parts[0]].val.shape[0] : 1;
    int cols0 = nodes_[parts[0]].val.shape.size() == 2 ? nodes_[parts[0]].val.shape[1]
                                                       : static_cast<int>(nodes_[parts[0]].val.size());
    int total = 0;
    for (Ref p : parts) {
        const Array<S>& P = nodes_[p].val;
        require<S>(P.shape.size() == 2, "concat", P);
        if (axis == 0) {
            require2<S>(P.shape[1] == cols0, "concat", nodes_[parts[0]].val, P);
            total += P.shape[0];
        } else {
            require2<S>(P.shape[0] == rows0, "concat", nodes_[parts[0]].val, P);
            total += P.shape[1];
        }
        req = req || nodes_[p].requires_grad;
    }
    Array<S> out = axis == 0 ? Array<S>::zeros({total, cols0}) : Array<S>::zeros({rows0, total});
    int at = 0;
    for (Ref p : parts) {
        const Array<S>& P = nodes_[p].val;
        if (axis == 0) {
            std::copy(P.data.begin(), P.data.end(), out.data.begin() + static_cast<size_t>(at) * cols0);
            at += P.shape[0];
        } else {
            for (int i = 0; i < rows0; ++i)
                std::copy(P.data.begin() + static_cast<size_t>(i) * P.shape[1],
                          P.data.begin() + static_cast<size_t>(i + 1) * P.shape[1],
                          out.data.begin() + static_cast<size_t>(i) * total + at);
            at += P.shape[1];
        }
    }
    std::vector<Ref> ps = parts;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [ps, r, axis, rows0, total](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            int at = 0;
            for (Ref p : ps) {
                const Array<S>& P = g.nodes_[p].val;
                if (axis == 0) {
                    const int cols = P.shape[1];
                    if (g.nodes_[p].requires_grad) {
                        Array<S>& dp = g.grad_buf(p);
                        const size_t off = static_cast<size_t>(at) * cols;
                        for (size_t i = 0; i < dp.data.size(); ++i) dp.data[i] += d.data[off + i];
                    }
                    at += P.shape[0];
                } else {
                    const int w = P.shape[1];
                    if (g.nodes_[p].requires_grad) {
                        Array<S>& dp = g.grad_buf(p);
                        for (int i = 0; i < rows0; ++i)
                            for (int j = 0; j < w; ++j)
                                dp.data[static_cast<size_t>(i) * w + j] += d.data[static_cast<size_t>(i) * total + at + j];
                    }
                    at += w;
                }
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::slice_cols(Ref a, int c0, int c1) {
    const Array<S>& A = nodes_[a].val;
    require<S>(A.shape.size() == 2 && c0 >= 0 && c1 <= A.shape[1] && c0 < c1, "slice_cols", A);
    const int m = A.shape[0], n = A.shape[1], w = c1 - c0;
    Array<S> out = Array<S>::zeros({m, w});
    for (int i = 0; i < m; ++i)
        std::copy(A.data.begin() + static_cast<size_t>(i) * n + c0, A.data.begin() + static_cast<size_t>(i) * n + c1,
                  out.data.begin() + static_cast<size_t>(i) * w);
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, c0, m, n, w](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) da.data[static_cast<size_t>(i) * n + c0 + j] += d.data[static_cast<size_t>(i) * w + j];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::embedding(Ref table, std::vector<int> ids) {
    const Array<S>& T = nodes_[table].val;
    require<S>(T.shape.size() == 2, "embedding", T);
    const int v = T.shape[0], d = T.shape[1];
    for (int id : ids)
        if (id < 0 || id >= v) throw ValidationError("embedding: id " + std::to_string(id) + " out of range");
    Array<S> out = Array<S>::zeros({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(T.data.begin() + static_cast<size_t>(ids[i]) * d, T.data.begin() + static_cast<size_t>(ids[i] + 1) * d,
                  out.data.begin() + i * d);
    bool req = nodes_[table].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [table, r, ids, d](Graph& g) {
            const Array<S>& dd = g.nodes_[r].grad;
            Array<S>& dt = g.grad_buf(table);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j) dt.data[static_cast<size_t>(ids[i]) * d + j] += dd.data[i * d + j];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::softmax_rows(Ref a) {
    const Array<S>& A = nodes_[a].val;
    require<S>(A.shape.size() == 2, "softmax", A);
    const int m = A.shape[0], n = A.shape[1];
    Array<S> out = Array<S>::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const S* x = A.data.data() + static_cast<size_t>(i) * n;
        S* y = out.data.data() + static_cast<size_t>(i) * n;
        S mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        S sum = S(0);
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= sum;
    }
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, m, n](Graph& g) {
            const Array<S>& y = g.nodes_[r].val;
            const Array<S>& dy = g.nodes_[r].grad;
            Array<S>& dx = g.grad_buf(a);
            for (int i = 0; i < m; ++i) {
                const S* yr = y.data.data() + static_cast<size_t>(i) * n;
                const S* dr = dy.data.data() + static_cast<size_t>(i) * n;
                S dot = S(0);
                for (int j = 0; j < n; ++j) dot += yr[j] * dr[j];
                S* dxr = dx.data.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dxr[j] += yr[j] * (dr[j] - dot);
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::layer_norm(Ref a, Ref gain, Ref bias) {
    const Array<S>& A = nodes_[a].val;
    const Array<S>& G = nodes_[gain].val;
    const Array<S>& B = nodes_[bias].val;
    require<S>(A.shape.size() == 2, "layer_norm", A);
    const int m = A.shape[0], n = A.shape[1];
    require2<S>(static_cast<size_t>(n) == G.size() && G.size() == B.size(), "layer_norm", G, B);
    constexpr S eps = S(1e-5);
    Array<S> out = Array<S>::zeros({m, n});
    Array<S> xhat = Array<S>::zeros({m, n});
    std::vector<S> invstd(m);
    for (int i = 0; i < m; ++i) {
        const S* x = A.data.data() + static_cast<size_t>(i) * n;
        S mu = S(0);
        for (int j = 0; j < n; ++j) mu += x[j];
        mu /= S(n);
        S var = S(0);
        for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= S(n);
        const S is = S(1) / std::sqrt(var + eps);
        invstd[i] = is;
        for (int j = 0; j < n; ++j) {
            const S xh = (x[j] - mu) * is;
            xhat.data[static_cast<size_t>(i) * n + j] = xh;
            out.data[static_cast<size_t>(i) * n + j] = G.data[j] * xh + B.data[j];
        }
    }
    bool req = nodes_[a].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req) {
        auto xh = std::make_shared<Array<S>>(std::move(xhat));
        auto is = std::make_shared<std::vector<S>>(std::move(invstd));
        nodes_[r].back = [a, gain, bias, r, m, n, xh, is](Graph& g) {
            const Array<S>& dy = g.nodes_[r].grad;
            const Array<S>& G = g.nodes_[gain].val;
            for (int i = 0; i < m; ++i) {
                const S* dyr = dy.data.data() + static_cast<size_t>(i) * n;
                const S* xhr = xh->data.data() + static_cast<size_t>(i) * n;
                if (g.nodes_[gain].requires_grad) {
                    Array<S>& dg = g.grad_buf(gain);
                    for (int j = 0; j < n; ++j) dg.data[j] += dyr[j] * xhr[j];
                }
                if (g.nodes_[bias].requires_grad) {
                    Array<S>& db = g.grad_buf(bias);
                    for (int j = 0; j < n; ++j) db.data[j] += dyr[j];
                }
                if (g.nodes_[a].requires_grad) {
                    // dx = invstd/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                    S sum_d = S(0), sum_dx = S(0);
                    for (int j = 0; j < n; ++j) {
                        const S dxh = dyr[j] * G.data[j];
                        sum_d += dxh;
                        sum_dx += dxh * xhr[j];
                    }
                    Array<S>& dxa = g.grad_buf(a);
                    S* dxr = dxa.data.data() + static_cast<size_t>(i) * n;
                    const S isv = (*is)[i];
                    for (int j = 0; j < n; ++j) {
                        const S dxh = dyr[j] * G.data[j];
                        dxr[j] += isv * (dxh - sum_d / S(n) - xhr[j] * sum_dx / S(n));
                    }
                }
            }
        };
    }
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::relu(Ref a) {
    Array<S> out = nodes_[a].val;
    for (S& v : out.data) v = std::max(v, S(0));
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            const Array<S>& x = g.nodes_[a].val;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i)
                if (x.data[i] > S(0)) da.data[i] += d.data[i];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::sigmoid(Ref a) {
    Array<S> out = nodes_[a].val;
    for (S& v : out.data) {
        if (v >= S(0)) {
            v = S(1) / (S(1) + std::exp(-v));
        } else {
            const S e = std::exp(v);
            v = e / (S(1) + e);
        }
    }
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r](Graph& g) {
            const Array<S>& y = g.nodes_[r].val;
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i] * y.data[i] * (S(1) - y.data[i]);
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::clamp_open01(Ref a) {
    // Numeric guard: sigmoid saturates to exactly 0/1 in low precision; the
    // guider contract needs values strictly inside (0,1). Gradient passes
    // through unchanged (the clamp binds only where sigmoid's grad is ~0).
    const S lo = std::numeric_limits<S>::epsilon();
    const S hi = S(1) - std::numeric_limits<S>::epsilon();
    Array<S> out = nodes_[a].val;
    for (S& v : out.data) v = std::min(std::max(v, lo), hi);
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::masked_mean_rows(Ref a, const std::vector<uint8_t>& mask) {
    const Array<S>& A = nodes_[a].val;
    require<S>(A.shape.size() == 2 && mask.size() == static_cast<size_t>(A.shape[0]), "masked_mean", A);
    const int m = A.shape[0], n = A.shape[1];
    int cnt = 0;
    for (uint8_t b : mask) cnt += b ? 1 : 0;
    if (cnt == 0) throw ValidationError("masked_mean: all positions masked");
    Array<S> out = Array<S>::zeros({1, n});
    for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        const S* x = A.data.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) out.data[j] += x[j];
    }
    for (int j = 0; j < n; ++j) out.data[j] /= S(cnt);
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, mask, m, n, cnt](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (int i = 0; i < m; ++i) {
                if (!mask[i]) continue;
                for (int j = 0; j < n; ++j) da.data[static_cast<size_t>(i) * n + j] += d.data[j] / S(cnt);
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::sum_all(Ref a) {
    const Array<S>& A = nodes_[a].val;
    S acc = S(0);
    for (S v : A.data) acc += v;
    bool req = nodes_[a].requires_grad;
    Ref r = push(Array<S>({1, 1}, {acc}), req, nullptr);
    if (req)
        nodes_[r].back = [a, r](Graph& g) {
            const S d = g.nodes_[r].grad.data[0];
            Array<S>& da = g.grad_buf(a);
            for (S& v : da.data) v += d;
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::dropout(Ref a, S rate, Rng& rng) {
    if (!train_mode_ || rate <= S(0)) return a;
    if (rate >= S(1)) throw ValidationError("dropout: rate must be < 1");
    const Array<S>& A = nodes_[a].val;
    const S keep = S(1) - rate;
    auto m = std::make_shared<std::vector<S>>(A.size());
    Array<S> out = A;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const S k = rng.uniform() < static_cast<double>(rate) ? S(0) : S(1) / keep;
        (*m)[i] = k;
        out.data[i] *= k;
    }
    bool req = nodes_[a].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [a, r, m](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            Array<S>& da = g.grad_buf(a);
            for (size_t i = 0; i < d.data.size(); ++i) da.data[i] += d.data[i] * (*m)[i];
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::rel_scores(Ref q, Ref pk, int key_len) {
    const Array<S>& Q = nodes_[q].val;
    const Array<S>& P = nodes_[pk].val;
    require2<S>(Q.shape.size() == 2 && P.shape.size() == 2 && Q.shape[1] == P.shape[1] && P.shape[0] % 2 == 1,
                "rel_scores", Q, P);
    const int m = Q.shape[0], hd = Q.shape[1], w = (P.shape[0] - 1) / 2;
    Array<S> out = Array<S>::zeros({m, key_len});
    for (int i = 0; i < m; ++i) {
        const S* qi = Q.data.data() + static_cast<size_t>(i) * hd;
        for (int j = 0; j < key_len; ++j) {
            const S* pr = P.data.data() + static_cast<size_t>(clip_offset<S>(j, i, w)) * hd;
            S acc = S(0);
            for (int d = 0; d < hd; ++d) acc += qi[d] * pr[d];
            out.data[static_cast<size_t>(i) * key_len + j] = acc;
        }
    }
    bool req = nodes_[q].requires_grad || nodes_[pk].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [q, pk, r, m, hd, w, key_len](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            const Array<S>& Q = g.nodes_[q].val;
            const Array<S>& P = g.nodes_[pk].val;
            for (int i = 0; i < m; ++i) {
                const S* qi = Q.data.data() + static_cast<size_t>(i) * hd;
                for (int j = 0; j < key_len; ++j) {
                    const S dv = d.data[static_cast<size_t>(i) * key_len + j];
                    if (dv == S(0)) continue;
                    const int c = clip_offset<S>(j, i, w);
                    if (g.nodes_[q].requires_grad) {
                        S* dq = g.grad_buf(q).data.data() + static_cast<size_t>(i) * hd;
                        const S* pr = P.data.data() + static_cast<size_t>(c) * hd;
                        for (int t = 0; t < hd; ++t) dq[t] += dv * pr[t];
                    }
                    if (g.nodes_[pk].requires_grad) {
                        S* dp = g.grad_buf(pk).data.data() + static_cast<size_t>(c) * hd;
                        for (int t = 0; t < hd; ++t) dp[t] += dv * qi[t];
                    }
                }
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::rel_values(Ref att, Ref pv) {
    const Array<S>& A = nodes_[att].val;
    const Array<S>& P = nodes_[pv].val;
    require2<S>(A.shape.size() == 2 && P.shape.size() == 2 && P.shape[0] % 2 == 1, "rel_values", A, P);
    const int m = A.shape[0], n = A.shape[1], hd = P.shape[1], w = (P.shape[0] - 1) / 2;
    Array<S> out = Array<S>::zeros({m, hd});
    for (int i = 0; i < m; ++i) {
        S* oi = out.data.data() + static_cast<size_t>(i) * hd;
        for (int j = 0; j < n; ++j) {
            const S a = A.data[static_cast<size_t>(i) * n + j];
            if (a == S(0)) continue;
            const S* pr = P.data.data() + static_cast<size_t>(clip_offset<S>(j, i, w)) * hd;
            for (int t = 0; t < hd; ++t) oi[t] += a * pr[t];
        }
    }
    bool req = nodes_[att].requires_grad || nodes_[pv].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [att, pv, r, m, n, hd, w](Graph& g) {
            const Array<S>& d = g.nodes_[r].grad;
            const Array<S>& A = g.nodes_[att].val;
            const Array<S>& P = g.nodes_[pv].val;
            for (int i = 0; i < m; ++i) {
                const S* di = d.data.data() + static_cast<size_t>(i) * hd;
                for (int j = 0; j < n; ++j) {
                    const int c = clip_offset<S>(j, i, w);
                    const S* pr = P.data.data() + static_cast<size_t>(c) * hd;
                    if (g.nodes_[att].requires_grad) {
                        S acc = S(0);
                        for (int t = 0; t < hd; ++t) acc += di[t] * pr[t];
                        g.grad_buf(att).data[static_cast<size_t>(i) * n + j] += acc;
                    }
                    if (g.nodes_[pv].requires_grad) {
                        const S a = A.data[static_cast<size_t>(i) * n + j];
                        if (a == S(0)) continue;
                        S* dp = g.grad_buf(pv).data.data() + static_cast<size_t>(c) * hd;
                        for (int t = 0; t < hd; ++t) dp[t] += a * di[t];
                    }
                }
            }
        };
    return r;
}

template <class S>
typename Graph<S>::Ref Graph<S>::cross_entropy(Ref logits, const std::vector<int>& targets, int ignore_id) {
    const Array<S>& L = nodes_[logits].val;
    require<S>(L.shape.size() == 2 && targets.size() == static_cast<size_t>(L.shape[0]), "cross_entropy", L);
    const int m = L.shape[0], v = L.shape[1];
    int count = 0;
    for (int t : targets) {
        if (t == ignore_id) continue;
        if (t < 0 || t >= v) throw ValidationError("cross_entropy: target " + std::to_string(t) + " out of range");
        ++count;
    }
    if (count == 0) throw ValidationError("cross_entropy: every position is ignored");
    S total = S(0);
    for (int i = 0; i < m; ++i) {
        if (targets[i] == ignore_id) continue;
        const S* x = L.data.data() + static_cast<size_t>(i) * v;
        S mx = x[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        S sum = S(0);
        for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
        total += std::log(sum) + mx - x[targets[i]];
    }
    Array<S> out({1, 1}, {total / S(count)});
    bool req = nodes_[logits].requires_grad;
    Ref r = push(std::move(out), req, nullptr);
    if (req)
        nodes_[r].back = [logits, r, targets, ignore_id, m, v, count](Graph& g) {
            const S d = g.nodes_[r].grad.data[0];
            const Array<S>& L = g.nodes_[logits].val;
            Array<S>& dl = g.grad_buf(logits);
            for (int i = 0; i < m; ++i) {
                if (targets[i] == ignore_id) continue;
                const S* x = L.data.data() + static_cast<size_t>(i) * v;
                S* dx = dl.data.data() + static_cast<size_t>(i) * v;
                S mx = x[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
                S sum = S(0);
                for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
                const S coef = d / S(count);
                for (int j = 0; j < v; ++j) {
                    S p = std::exp(x[j] - mx) / sum;
                    dx[j] += coef * (p - (j == targets[i] ? S(1) : S(0)));
                }
            }
        };
    return r;
}

template <class S>
void Graph<S>::backward(Ref loss) {
    if (!nodes_[loss].val.is_scalar()) throw ValidationError("backward: loss must be scalar");
    if (!nodes_[loss].requires_grad) return;  // nothing reachable requires grad
    // node-local buffers reset per sweep; only bound parameters accumulate
    for (Node& n : nodes_)
        if (n.requires_grad) std::fill(n.grad.data.begin(), n.grad.data.end(), S(0));
    nodes_[loss].grad.data[0] = S(1);
    for (Ref i = loss; i >= 0; --i) {
        if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this);
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace race
