#include "geofuse/gradcheck.hpp"

#include <cmath>

#include "geofuse/rng.hpp"
#include "geofuse/tape.hpp"

namespace geofuse {

double fd_max_rel_err(const ScalarFn& f, const GradFn& analytic,
                      const std::vector<double>& x0, double h) {
    std::vector<double> a = analytic(x0);
    std::vector<double> n(x0.size());
    std::vector<double> x = x0;
    for (size_t i = 0; i < x0.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double fp = f(x);
        x[i] = keep - h;
        double fm = f(x);
        x[i] = keep;
        n[i] = (fp - fm) / (2.0 * h);
    }
    double num = 0.0, da = 0.0, dn = 0.0;
    for (size_t i = 0; i < x0.size(); ++i) {
        double d = a[i] - n[i];
        num += d * d;
        da += a[i] * a[i];
        dn += n[i] * n[i];
    }
    double denom = std::sqrt(da) + std::sqrt(dn);
    if (denom < 1e-12) return std::sqrt(num);
    return std::sqrt(num) / denom;
}

namespace {

using Id = TapeD::Id;

struct BuiltCase {
    std::vector<double> x0;
    ScalarFn f;
    GradFn g;
};

TensorD rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(s));
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

// random linear projection of a tensor node down to a scalar node
Id project_node(TapeD& t, Id x, uint64_t seed) {
    Rng rng(seed);
    TensorD r(t.shape(x));
    for (auto& v : r.v) v = rng.uniform(-1.0, 1.0);
    Id rn = t.input(r, false);
    return t.reduce_sum_all(t.mul(x, rn));
}

// Push inputs as differentiable leaves, run the graph builder to a scalar.
// The graph is rebuilt on every evaluation so finite differences see a clean
// forward pass each time.
BuiltCase make_case(std::vector<TensorD> inputs,
                    std::function<Id(TapeD&, const std::vector<Id>&)> graph) {
    BuiltCase c;
    std::vector<Shape> shapes;
    for (const auto& t : inputs) {
        shapes.push_back(t.shape);
        c.x0.insert(c.x0.end(), t.v.begin(), t.v.end());
    }
    auto unpack_run = [shapes, graph](const std::vector<double>& x, bool want_grad,
                                      std::vector<double>* grads) -> double {
        TapeD tape;
        std::vector<Id> ids;
        size_t off = 0;
        for (const Shape& s : shapes) {
            size_t n = static_cast<size_t>(numel(s));
            std::vector<double> vals(x.begin() + static_cast<long>(off),
                                     x.begin() + static_cast<long>(off + n));
            off += n;
            ids.push_back(tape.input(s, std::move(vals), true));
        }
        Id root = graph(tape, ids);
        double out = tape.val(root)[0];
        if (want_grad) {
            tape.backward(root);
            grads->clear();
            for (Id id : ids) {
                if (tape.has_grad(id)) {
                    const auto& g = tape.grad(id);
                    grads->insert(grads->end(), g.begin(), g.end());
                } else {
                    grads->insert(grads->end(), static_cast<size_t>(numel(tape.shape(id))), 0.0);
                }
            }
        }
        return out;
    };
    c.f = [unpack_run](const std::vector<double>& x) { return unpack_run(x, false, nullptr); };
    c.g = [unpack_run](const std::vector<double>& x) {
        std::vector<double> grads;
        unpack_run(x, true, &grads);
        return grads;
    };
    return c;
}

// keep values away from the relu kink so central differences stay valid
TensorD rand_away_from_zero(Shape s, Rng& rng, double margin = 0.1) {
    TensorD t = rand_tensor(std::move(s), rng);
    for (auto& v : t.v)
        if (std::abs(v) < margin) v += (v >= 0 ? margin : -margin);
    return t;
}

struct CaseDef {
    std::string op;
    double threshold;
    std::function<BuiltCase(uint64_t)> factory;
};

std::vector<CaseDef> suite_cases() {
    std::vector<CaseDef> cases;

    cases.push_back({"conv2d", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "conv2d");
        auto x = rand_tensor({2, 3, 5, 5}, rng);
        auto w = rand_tensor({4, 3, 3, 3}, rng);
        auto b = rand_tensor({4}, rng);
        int stride = (seed % 2 == 0) ? 1 : 2;
        Padding pad = (seed % 3 == 0) ? Padding::valid : Padding::same;
        uint64_t prj = Rng::derive(seed, "conv2d.prj");
        return make_case({x, w, b}, [stride, pad, prj](TapeD& t, const std::vector<Id>& in) {
            Id y = t.conv2d(in[0], in[1], in[2], stride, pad);
            return project_node(t, y, prj);
        });
    }});

    cases.push_back({"channel_pool", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "cpool");
        auto x = rand_tensor({2, 6, 4, 5}, rng);
        uint64_t prj = Rng::derive(seed, "cpool.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            Id mx = t.channel_pool(in[0], kernels::PoolMode::max);
            Id av = t.channel_pool(in[0], kernels::PoolMode::avg);
            Id pm = project_node(t, mx, prj);
            Id pa = project_node(t, av, prj);
            return t.reduce_sum_all(t.add(pm, pa));
        });
    }});

    cases.push_back({"frobenius_reduce", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "frob");
        auto f = rand_tensor({4, 6, 7}, rng);
        auto p = rand_tensor({6, 7}, rng);
        uint64_t prj = Rng::derive(seed, "frob.prj");
        return make_case({f, p}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.frobenius_reduce(in[0], in[1]), prj);
        });
    }});

    cases.push_back({"softmax", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "softmax");
        auto x = rand_tensor({9}, rng, -2.0, 2.0);
        uint64_t prj = Rng::derive(seed, "softmax.prj");
        Rng mrng = Rng::substream(seed, "softmax.mask");
        std::vector<uint8_t> valid(9, 1);
        valid[static_cast<size_t>(mrng.uniform_index(9))] = 0;
        return make_case({x}, [prj, valid](TapeD& t, const std::vector<Id>& in) {
            Id plain = t.softmax(in[0], 0);
            Id masked = t.softmax(in[0], 0, &valid);
            Id pp = project_node(t, plain, prj);
            Id pm = project_node(t, masked, prj);
            return t.reduce_sum_all(t.add(pp, pm));
        });
    }});

    cases.push_back({"batchnorm2d", 1e-3, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "bn");
        auto x = rand_tensor({3, 4, 3, 3}, rng);
        auto gamma = rand_tensor({4}, rng, 0.5, 1.5);
        auto beta = rand_tensor({4}, rng, -0.5, 0.5);
        uint64_t prj = Rng::derive(seed, "bn.prj");
        return make_case({x, gamma, beta}, [prj](TapeD& t, const std::vector<Id>& in) {
            BnRunningT<double> run(4);
            Id y = t.batchnorm2d(in[0], in[1], in[2], run, /*train=*/true);
            return project_node(t, y, prj);
        });
    }});

    cases.push_back({"layer_norm", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "ln");
        auto x = rand_tensor({3, 4, 2, 5}, rng);
        auto gamma = rand_tensor({4, 2, 5}, rng, 0.5, 1.5);
        auto beta = rand_tensor({4, 2, 5}, rng, -0.5, 0.5);
        uint64_t prj = Rng::derive(seed, "ln.prj");
        return make_case({x, gamma, beta}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.layer_norm(in[0], in[1], in[2]), prj);
        });
    }});

    cases.push_back({"relu", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "relu");
        auto x = rand_away_from_zero({3, 2, 4, 4}, rng);
        uint64_t prj = Rng::derive(seed, "relu.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.relu(in[0]), prj);
        });
    }});

    cases.push_back({"sigmoid", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "sigmoid");
        auto x = rand_tensor({3, 2, 4, 4}, rng, -3.0, 3.0);
        uint64_t prj = Rng::derive(seed, "sigmoid.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.sigmoid(in[0]), prj);
        });
    }});

    cases.push_back({"add", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "add");
        auto a = rand_tensor({3, 4, 5}, rng);
        auto b = rand_tensor({5}, rng);  // broadcast over leading dims
        uint64_t prj = Rng::derive(seed, "add.prj");
        return make_case({a, b}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.add(in[0], in[1]), prj);
        });
    }});

    cases.push_back({"mul", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "mul");
        auto a = rand_tensor({3, 4, 5}, rng);
        auto b = rand_tensor({4, 1}, rng);  // broadcast trailing dim
        uint64_t prj = Rng::derive(seed, "mul.prj");
        return make_case({a, b}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.mul(in[0], in[1]), prj);
        });
    }});

    cases.push_back({"scale", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "scalec");
        auto x = rand_tensor({7, 3}, rng);
        uint64_t prj = Rng::derive(seed, "scalec.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.scale(in[0], 0.37), prj);
        });
    }});

    cases.push_back({"maxpool2", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "mp");
        // quantize and add per-slot offsets so no 2x2 window holds values
        // within the finite-difference step of each other
        Shape s{2, 3, 6, 8};
        TensorD x(s);
        int H = s[2], W = s[3];
        for (int64_t i = 0; i < x.numel(); ++i) {
            double q = std::round(rng.uniform(-1.0, 1.0) / 0.05) * 0.05;
            int h = static_cast<int>((i / W) % H), w = static_cast<int>(i % W);
            x.v[static_cast<size_t>(i)] = q + 0.01 * ((h % 2) * 2 + (w % 2));
        }
        uint64_t prj = Rng::derive(seed, "mp.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.maxpool2(in[0]), prj);
        });
    }});

    cases.push_back({"upsample_nearest2", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "up");
        auto x = rand_tensor({2, 3, 3, 4}, rng);
        uint64_t prj = Rng::derive(seed, "up.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.upsample_nearest2(in[0]), prj);
        });
    }});

    cases.push_back({"cross_entropy", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "ce");
        auto logits = rand_tensor({2, 4, 3, 5}, rng, -2.0, 2.0);
        std::vector<int32_t> labels(2 * 3 * 5);
        Rng lr = Rng::substream(seed, "ce.labels");
        for (auto& l : labels) {
            uint64_t r = lr.uniform_index(5);
            l = r == 4 ? 255 : static_cast<int32_t>(r);  // roughly 20% ignored
        }
        labels[0] = 255;  // make sure the ignore path is exercised
        labels[1] = 2;    // and at least one pixel counts
        return make_case({logits}, [labels](TapeD& t, const std::vector<Id>& in) {
            return t.cross_entropy(in[0], labels, 255);
        });
    }});

    cases.push_back({"uncertainty_loss", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "ul");
        auto mean = rand_tensor({4, 5}, rng);
        auto logvar = rand_tensor({4, 5}, rng, -1.0, 1.0);
        TensorD target = rand_tensor({4, 5}, rng);
        std::vector<uint8_t> mask(20, 1);
        Rng mr = Rng::substream(seed, "ul.mask");
        for (auto& m : mask) m = mr.uniform() < 0.75 ? 1 : 0;
        mask[3] = 0;
        mask[0] = 1;
        return make_case({mean, logvar}, [target, mask](TapeD& t, const std::vector<Id>& in) {
            return t.uncertainty_loss(in[0], in[1], target, mask);
        });
    }});

    cases.push_back({"sum_hw", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "shw");
        auto x = rand_tensor({3, 2, 4, 5}, rng);
        uint64_t prj = Rng::derive(seed, "shw.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.sum_hw(in[0]), prj);
        });
    }});

    cases.push_back({"reduce_sum_all", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "rsa");
        auto x = rand_tensor({6, 7}, rng);
        return make_case({x}, [](TapeD& t, const std::vector<Id>& in) {
            return t.reduce_sum_all(in[0]);
        });
    }});

    cases.push_back({"tile_hw", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "thw");
        auto v = rand_tensor({5}, rng);
        uint64_t prj = Rng::derive(seed, "thw.prj");
        return make_case({v}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.tile_hw(in[0], 3, 4), prj);
        });
    }});

    cases.push_back({"slice_pixel", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "spx");
        auto x = rand_tensor({4, 5, 6}, rng);
        uint64_t prj = Rng::derive(seed, "spx.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.slice_pixel(in[0], 2, 3), prj);
        });
    }});

    cases.push_back({"slice_channel", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "sch");
        auto x = rand_tensor({2, 3, 4, 4}, rng);
        uint64_t prj = Rng::derive(seed, "sch.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.slice_channel(in[0], 1), prj);
        });
    }});

    cases.push_back({"reshape", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "rs");
        auto x = rand_tensor({3, 8}, rng);
        uint64_t prj = Rng::derive(seed, "rs.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.reshape(in[0], {2, 3, 4}), prj);
        });
    }});

    cases.push_back({"repeat_batch", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "rb");
        auto x = rand_tensor({2, 3, 2, 2}, rng);
        uint64_t prj = Rng::derive(seed, "rb.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.repeat_batch(in[0], 3), prj);
        });
    }});

    cases.push_back({"tile_cells", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "tc");
        auto x = rand_tensor({3, 2, 2}, rng);
        uint64_t prj = Rng::derive(seed, "tc.prj");
        return make_case({x}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.tile_cells(in[0], 2, 3, 4), prj);
        });
    }});

    cases.push_back({"concat_ch", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "cc");
        auto a = rand_tensor({2, 3, 4, 4}, rng);
        auto b = rand_tensor({2, 2, 4, 4}, rng);
        uint64_t prj = Rng::derive(seed, "cc.prj");
        return make_case({a, b}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.concat_ch({in[0], in[1]}), prj);
        });
    }});

    cases.push_back({"stack_rows", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "sr");
        auto a = rand_tensor({6}, rng);
        auto b = rand_tensor({6}, rng);
        uint64_t prj = Rng::derive(seed, "sr.prj");
        return make_case({a, b}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.stack_rows({in[0], in[1]}), prj);
        });
    }});

    cases.push_back({"frob_reduce_batch", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "frb");
        auto f = rand_tensor({2, 3, 4, 5}, rng);
        auto p = rand_tensor({6, 1, 4, 5}, rng);  // K=2, T=3
        uint64_t prj = Rng::derive(seed, "frb.prj");
        return make_case({f, p}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.frob_reduce_batch(in[0], in[1]), prj);
        });
    }});

    cases.push_back({"weighted_fuse", 1e-4, [](uint64_t seed) {
        Rng rng = Rng::substream(seed, "wf");
        auto kmat = rand_tensor({8, 5}, rng);  // K=2, T=4, C=5
        auto wgt = rand_tensor({2, 4}, rng);
        uint64_t prj = Rng::derive(seed, "wf.prj");
        return make_case({kmat, wgt}, [prj](TapeD& t, const std::vector<Id>& in) {
            return project_node(t, t.weighted_fuse(in[0], in[1], 2), prj);
        });
    }});

    return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, int n_seeds,
                                                const std::string& sabotage) {
    std::vector<GradCheckResult> results;
    for (const CaseDef& def : suite_cases()) {
        GradCheckResult r;
        r.op = def.op;
        r.threshold = def.threshold;
        for (int s = 0; s < n_seeds; ++s) {
            BuiltCase c = def.factory(seed + static_cast<uint64_t>(s) * 1000003ull);
            GradFn g = c.g;
            if (def.op == sabotage) {
                g = [inner = c.g](const std::vector<double>& x) {
                    auto v = inner(x);
                    for (auto& e : v) e = e * 1.01 + 1e-3;
                    return v;
                };
            }
            double err = fd_max_rel_err(c.f, g, c.x0);
            r.max_rel_err = std::max(r.max_rel_err, err);
        }
        r.passed = r.max_rel_err < r.threshold;
        results.push_back(r);
    }
    return results;
}

}  // namespace geofuse
