// Generated from stats_fixture.txt by an independent reference (numpy/scipy). Do not edit.

#[allow(clippy::type_complexity)]
pub const WELCH: &[(&[f64], &[f64], f64, f64, f64, f64, f64, f64)] = &[
    (
        &[1.0, 2.0, 3.0, 4.0, 5.0],
        &[2.0, 3.0, 4.0, 5.0, 6.0],
        1.0,
        -1.3060041352041658,
        3.306004135204166,
        0.34659350708733416,
        1.0,
        8.0,
    ),
    (
        &[1.0, 2.0],
        &[3.0, 5.0],
        2.5,
        -4.418522830071065,
        9.418522830071065,
        0.19872738893452604,
        2.23606797749979,
        1.4705882352941178,
    ),
    (
        &[0.18, 0.19, 0.2, 0.17, 0.185, 0.192],
        &[0.19, 0.2, 0.205, 0.21, 0.198],
        0.014433333333333298,
        0.0021446491309528182,
        0.02672201753571378,
        0.026236053658995905,
        2.6624610805856777,
        8.879485931099895,
    ),
    (
        &[10.0, 12.5, 9.5, 11.0],
        &[10.0, 12.5, 9.5, 11.0],
        0.0,
        -2.288876450655318,
        2.288876450655318,
        1.0,
        0.0,
        6.0,
    ),
    (
        &[-3.0, -1.0, 2.0, 8.0, 0.5],
        &[100.0, 101.0, 99.5],
        98.86666666666667,
        93.73550096817873,
        103.99783236515462,
        2.514981835351272e-07,
        51.50671896863899,
        4.430627942756069,
    ),
    (
        &[
            -4.49097, -4.610114, -3.18948, -3.226293, -3.077186, -4.32527, -4.4783, -3.5883,
            -4.317403, -4.699299, -3.587985, -4.717602, -5.658121, -5.605702, -3.522695, -4.030244,
            -4.066502, -3.476172, -1.685897, -3.911988, -2.142764, -2.812981, -3.012547, -4.133394,
            -2.842872, -4.123945, -4.921008, -3.991192, -4.059041, -4.312203,
        ],
        &[
            -6.332854, -5.238845, -5.682664, -0.738606, -0.044419, -3.3956, 0.200931, -1.190747,
            -1.588851, 3.090534, -4.888734, -2.077432, -2.912184, -2.391312, 7.504021, -4.559917,
            -4.617151, -5.058206, -4.143684, 4.501168, 1.362649, -3.219777, -3.112033, -1.39763,
        ],
        1.9734430416666664,
        0.507919916310535,
        3.438966167022798,
        0.010288815859774134,
        2.7700885285822516,
        25.590889444293108,
    ),
    (
        &[
            -0.04285, -4.92341, 0.018381, 1.496399, -4.058995, -1.694517, 3.001381, -2.018554,
            -1.784734, -2.612531, 4.550235, -1.669673, -2.361262, -0.201692, 7.693796, -8.087001,
            -2.087497, -0.342556, -3.182134, -3.015932, 1.751484, -1.016149, 6.743397, 6.651543,
            -5.343753, -6.555156, -0.296296, -1.054439, -4.255341, 0.526668, -2.315958, -7.048821,
            -1.30419, 1.530031, -2.828854, 0.000988, -1.523537,
        ],
        &[
            2.469097, -3.450515, -5.109812, -1.871793, -7.178859, -4.56277, -5.339634, -4.518398,
            -5.082109, -6.808546, -2.010199, -7.322733,
        ],
        -3.214310087837838,
        -5.259056533056062,
        -1.1695636426196145,
        0.0034414611492003208,
        -3.2436168642882155,
        24.11238678620011,
    ),
    (
        &[
            3.861856, 2.062584, 2.228519, -0.483647, 2.28608, 3.124093, 2.178673, 1.489149,
            3.027889, 1.967766, 2.726061, 2.249369, -0.110922, 2.63865, 4.310943, 2.410677,
            1.746359, 1.54037, 0.668184, 3.925395, 0.871122, 1.538315, -1.107636, 1.445818,
            2.813412, 1.059508, -0.001616, 1.161789, 1.780518, 2.274115, 1.121006, 1.697373,
            1.667142, 0.877047, 0.5484, 0.372007, 2.911461,
        ],
        &[
            4.293252, 4.137032, 4.107051, 5.353927, 7.780385, 0.884235, 3.090615, 5.288102,
        ],
        2.613370037162163,
        0.9436742120774926,
        4.283065862246833,
        0.006782420601032121,
        3.596650228434727,
        8.164982720319589,
    ),
    (
        &[
            -2.02787, -2.436601, -1.632854, -1.922156, -1.623109, -1.203834, -1.761664, -2.359111,
            -1.960895, -2.264088, -2.04668, -1.264288, -1.004064, -2.164935, -1.226823, -2.421498,
            -1.752503, -1.227191, -1.734689, -1.88287, -1.572396, -1.876086, -2.249377, -1.43662,
            -1.781166, -1.717459, -2.249684, -1.140633, -2.135309, -2.713594, -1.223119, -2.347571,
            -1.865442, -3.043352, -1.874859, -2.210596,
        ],
        &[
            3.486484, -1.329936, 4.269148, 5.533243, 5.251584, 5.561698, 3.343003, 5.559562,
            5.779885, 2.895807, 4.825494, 2.576313, 2.208869, 6.775652, 5.922012, 3.49552,
            2.684205, 3.061389, -3.07987, 4.476436, 6.104065, 8.778162, 2.475694, -0.404145,
            6.704111,
        ],
        5.749147233333333,
        4.64495200063656,
        6.853342466030106,
        7.512083462686598e-11,
        10.722070178223161,
        25.055576854746842,
    ),
    (
        &[
            2.906869, -1.374904, 1.189266, 1.331152, 2.873319, 6.205782, 6.974946,
        ],
        &[
            9.42734, 1.193221, 2.458473, -4.980221, -1.880456, -3.653763, 3.172709, 8.39157,
            4.069471, 10.018033, 4.648244, 7.951878, 1.631798, -1.378773, -5.800538, 3.397703,
            6.186518, 6.463364, 6.422985,
        ],
        0.16657685714285675,
        -3.1119662421181116,
        3.445119956403825,
        0.9161670774223163,
        0.10675305339550023,
        17.978861653964234,
    ),
];

#[allow(clippy::type_complexity)]
pub const SRM: &[(&[u64], &[f64], f64, f64)] = &[
    (&[5000, 5000], &[0.5, 0.5], 0.0, 1.0),
    (&[5500, 4500], &[0.5, 0.5], 100.0, 1.5239706048320995e-23),
    (
        &[3334, 3333, 3333],
        &[0.3333333333333333, 0.3333333333333333, 0.3333333333333333],
        0.00019999999999999998,
        0.9999000049998333,
    ),
    (&[5050, 4950], &[0.5, 0.5], 1.0, 0.31731050786291115),
    (&[980, 1020], &[0.5, 0.5], 0.8, 0.37109336952269756),
    (
        &[2600, 7400],
        &[0.25, 0.75],
        5.333333333333333,
        0.020921335337794035,
    ),
    (
        &[100, 130, 170],
        &[0.2, 0.3, 0.5],
        10.333333333333332,
        0.0057035489980074025,
    ),
    (&[25, 25], &[0.5, 0.5], 0.0, 1.0),
    (&[23, 27], &[0.5, 0.5], 0.32, 0.5716076449533314),
    (
        &[4000, 3600],
        &[0.5, 0.5],
        21.05263157894737,
        4.468387345230037e-06,
    ),
];
